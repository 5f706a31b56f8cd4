//! Exact quadratic cost under deterministic controls.
//!
//! For deterministic `u` the mean `μ = E x` and second moment `M = E[x x^T]`
//! satisfy the closed system
//!
//! ```text
//! μ' = (A + A1) μ + B u
//! M' = (A + A1) M + M (A + A1)^T + B u μ^T + μ u^T B^T
//!      + C M C^T + C μ u^T D^T + D u μ^T C^T + D u u^T D^T
//! ```
//!
//! and `J(u) = <G, M(T)>_F + ∫ (<Q, M>_F + <R u, u>) ds`. Both are integrated
//! with the same integrating-factor RK4 used by the backward solvers.

use crate::error::{Error, Result};
use crate::integrate::{ensure_finite, lawson_step, ExpFrame, FrameState};
use crate::linalg::scale_rows_cols;
use crate::scalar::Real;
use crate::scenario::Scenario;
use crate::sde::{ControlPath, ControlPolicy};
use crate::spectral::CellCoeffs;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState<T: Real> {
    pub mean: DVector<T>,
    pub second: DMatrix<T>,
    /// Running cost accumulated so far.
    pub cost: T,
}

impl<T: Real> MomentState<T> {
    pub fn initial(eta: &DVector<T>) -> Self {
        Self {
            mean: eta.clone(),
            second: eta * eta.transpose(),
            cost: T::zero(),
        }
    }
}

impl<T: Real> FrameState<T> for MomentState<T> {
    fn propagate(&self, e: &DVector<T>) -> Self {
        let mut second = self.second.clone();
        scale_rows_cols(&mut second, e, e);
        Self {
            mean: self.mean.component_mul(e),
            second,
            cost: self.cost,
        }
    }

    fn add_scaled(&self, other: &Self, a: T) -> Self {
        Self {
            mean: &self.mean + &other.mean * a,
            second: &self.second + &other.second * a,
            cost: self.cost + other.cost * a,
        }
    }

    fn scale(&self, a: T) -> Self {
        Self {
            mean: &self.mean * a,
            second: &self.second * a,
            cost: self.cost * a,
        }
    }

    fn is_finite(&self) -> bool {
        self.cost.is_finite() && self.mean.iter().chain(self.second.iter()).all(|x| x.is_finite())
    }
}

impl<T: Real> FrameState<T> for DVector<T> {
    fn propagate(&self, e: &DVector<T>) -> Self {
        self.component_mul(e)
    }

    fn add_scaled(&self, other: &Self, a: T) -> Self {
        self + other * a
    }

    fn scale(&self, a: T) -> Self {
        self * a
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Coupling part of the moment system on one cell with constant `u`.
fn moment_rhs<T: Real>(cc: &CellCoeffs<'_, T>, u: &DVector<T>, s: &MomentState<T>) -> MomentState<T> {
    let bu = cc.b * u;
    let du = cc.d * u;
    let cm = cc.c * &s.mean;
    let a1m = cc.a1 * &s.second;

    let mut second = &a1m + a1m.transpose();
    second += &bu * s.mean.transpose();
    second += &s.mean * bu.transpose();
    second += cc.c * &s.second * cc.c.transpose();
    second += &cm * du.transpose();
    second += &du * cm.transpose();
    second += &du * du.transpose();

    MomentState {
        mean: cc.a1 * &s.mean + bu,
        second,
        cost: cc.q.dot(&s.second) + u.dot(&(cc.r * u)),
    }
}

/// Moments at `T` and the accumulated running cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalMoments<T: Real> {
    pub mean: DVector<T>,
    pub second: DMatrix<T>,
    pub running: T,
}

impl<T: Real> TerminalMoments<T> {
    /// `<G, M(T)>_F + running`
    pub fn cost(&self, g: &DMatrix<T>) -> T {
        g.dot(&self.second) + self.running
    }
}

fn check_control<T: Real>(scenario: &Scenario<T>, u: &ControlPath<T>) -> Result<()> {
    let g = u.grid();
    let s = &scenario.grid;
    if g.steps() != s.steps() || g.t0() != s.t0() || g.t_end() != s.t_end() {
        return Err(Error::DimensionMismatch(
            "control grid differs from scenario grid".into(),
        ));
    }
    if u.dim() != scenario.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "control has {} components, expected {}",
            u.dim(),
            scenario.control_dim()
        )));
    }
    Ok(())
}

/// Integrates the moment system from cell `first`, starting from `start`.
pub(crate) fn moments_from<T: Real>(
    scenario: &Scenario<T>,
    u: &ControlPath<T>,
    first: usize,
    start: MomentState<T>,
) -> Result<TerminalMoments<T>> {
    let grid = &scenario.grid;
    let h = grid.step();
    let frame = ExpFrame::new(scenario.model.lambda(), h);
    let mut state = start;
    for i in first..grid.steps() {
        let cc = scenario.coeffs.cell(grid, i);
        let ui = u.value(i);
        let k1 = moment_rhs(&cc, ui, &state);
        state = lawson_step(&frame, &state, h, k1, |_, s| Ok(moment_rhs(&cc, ui, s)))?;
        ensure_finite(&state, "moment integration", i + 1)?;
    }
    Ok(TerminalMoments {
        mean: state.mean,
        second: state.second,
        running: state.cost,
    })
}

pub fn terminal_moments<T: Real>(scenario: &Scenario<T>, u: &ControlPath<T>) -> Result<TerminalMoments<T>> {
    check_control(scenario, u)?;
    moments_from(scenario, u, 0, MomentState::initial(&scenario.eta))
}

/// `J(t0, η; u)` for a deterministic control, from the moment system.
pub fn exact_cost_deterministic<T: Real>(scenario: &Scenario<T>, u: &ControlPath<T>) -> Result<T> {
    Ok(terminal_moments(scenario, u)?.cost(&scenario.coeffs.g))
}

/// Exact cost of a policy; only deterministic open-loop policies qualify.
pub fn exact_cost<T: Real>(scenario: &Scenario<T>, policy: &ControlPolicy<T>) -> Result<T> {
    match policy {
        ControlPolicy::OpenLoop(u) => exact_cost_deterministic(scenario, u),
        _ => Err(Error::NonDeterministicPolicy),
    }
}

/// Mean path of `x' = (A + A1) x + B u`, `x(t0) = x0`, sampled at the nodes.
pub fn mean_path<T: Real>(scenario: &Scenario<T>, u: &ControlPath<T>, x0: &DVector<T>) -> Result<Vec<DVector<T>>> {
    check_control(scenario, u)?;
    mean_path_from(scenario, u, 0, x0.clone())
}

/// Mean path from cell `first` on; entries before `first` are zero.
pub(crate) fn mean_path_from<T: Real>(
    scenario: &Scenario<T>,
    u: &ControlPath<T>,
    first: usize,
    x0: DVector<T>,
) -> Result<Vec<DVector<T>>> {
    let grid = &scenario.grid;
    let h = grid.step();
    let n = scenario.state_dim();
    let frame = ExpFrame::new(scenario.model.lambda(), h);
    let mut out = vec![DVector::zeros(n); grid.steps() + 1];
    out[first] = x0;
    for i in first..grid.steps() {
        let cc = scenario.coeffs.cell(grid, i);
        let bu = cc.b * u.value(i);
        let rhs = |x: &DVector<T>| cc.a1 * x + &bu;
        let x = &out[i];
        let next = lawson_step(&frame, x, h, rhs(x), |_, s| Ok(rhs(s)))?;
        ensure_finite(&next, "mean integration", i + 1)?;
        out[i + 1] = next;
    }
    Ok(out)
}
