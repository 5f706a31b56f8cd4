//! Monte Carlo simulation of the controlled state equation
//!
//! ```text
//! x_{i+1} = e^{AΔ} [x_i + Δ(A1 x_i + B u_i) + (C x_i + D u_i) ΔW_i]
//! ```
//!
//! Each path draws its Brownian increments from its own ChaCha stream keyed by
//! `(seed, path index)`, so an ensemble is bit-identical for any worker count.
//! Per-path costs are accumulated on the fly; full trajectories are kept only
//! on request.

use crate::error::{Error, Result};
use crate::io::fmt17;
use crate::lyapunov::FeedbackPath;
use crate::moments::exact_cost_deterministic;
use crate::scalar::Real;
use crate::scenario::Scenario;
use crate::spectral::{CellCoeffs, TimeGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Deterministic control sampled at the grid nodes; `values[i]` acts on cell `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath<T: Real> {
    grid: TimeGrid<T>,
    values: Vec<DVector<T>>,
}

impl<T: Real> ControlPath<T> {
    pub fn new(grid: TimeGrid<T>, values: Vec<DVector<T>>) -> Result<Self> {
        if values.len() != grid.steps() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "control path has {} samples, grid has {} nodes",
                values.len(),
                grid.steps() + 1
            )));
        }
        let k = values[0].len();
        if values.iter().any(|v| v.len() != k) {
            return Err(Error::DimensionMismatch(
                "control samples have differing lengths".into(),
            ));
        }
        if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Parse("control path has non-finite entries".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid<T>, value: DVector<T>) -> Self {
        Self {
            grid,
            values: vec![value; grid.steps() + 1],
        }
    }

    pub fn zeros(grid: TimeGrid<T>, k: usize) -> Self {
        Self::constant(grid, DVector::zeros(k))
    }

    pub fn from_fn(grid: TimeGrid<T>, f: impl FnMut(usize) -> DVector<T>) -> Result<Self> {
        Self::new(grid, (0..=grid.steps()).map(f).collect())
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn value(&self, i: usize) -> &DVector<T> {
        &self.values[i]
    }

    pub fn values(&self) -> &[DVector<T>] {
        &self.values
    }

    /// `Δ Σ_i |u_i|^2` over the cells.
    pub fn l2_norm_squared(&self) -> T {
        let h = self.grid.step();
        self.values[..self.grid.steps()]
            .iter()
            .fold(T::zero(), |acc, v| acc + h * v.norm_squared())
    }
}

/// Anything that maps `(node, state)` to a control value.
///
/// Implementations see only the current state, which is what makes the
/// simulated controls adapted.
pub trait ControlLaw<T: Real>: Sync {
    fn control_into(&self, node: usize, state: &DVector<T>, out: &mut DVector<T>);

    /// Checked once before simulation.
    fn check(&self, _grid: &TimeGrid<T>, _n: usize, _k: usize) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlPolicy<T: Real> {
    OpenLoop(ControlPath<T>),
    Feedback(FeedbackPath<T>),
    FeedbackPlusOpenLoop(FeedbackPath<T>, ControlPath<T>),
}

impl<T: Real> ControlPolicy<T> {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, Self::OpenLoop(_))
    }
}

fn same_grid<T: Real>(a: &TimeGrid<T>, b: &TimeGrid<T>) -> Result<()> {
    if a.steps() != b.steps() || a.t0() != b.t0() || a.t_end() != b.t_end() {
        return Err(Error::DimensionMismatch(
            "policy grid differs from scenario grid".into(),
        ));
    }
    Ok(())
}

impl<T: Real> ControlLaw<T> for ControlPolicy<T> {
    fn control_into(&self, node: usize, state: &DVector<T>, out: &mut DVector<T>) {
        match self {
            Self::OpenLoop(u) => out.copy_from(u.value(node)),
            Self::Feedback(theta) => out.gemv(T::one(), theta.node(node), state, T::zero()),
            Self::FeedbackPlusOpenLoop(theta, u) => {
                out.copy_from(u.value(node));
                out.gemv(T::one(), theta.node(node), state, T::one());
            }
        }
    }

    fn check(&self, grid: &TimeGrid<T>, n: usize, k: usize) -> Result<()> {
        let check_theta = |theta: &FeedbackPath<T>| {
            same_grid(theta.grid(), grid)?;
            if theta.shape() != (k, n) {
                return Err(Error::DimensionMismatch(format!(
                    "feedback is {:?}, expected ({k}, {n})",
                    theta.shape()
                )));
            }
            Ok(())
        };
        let check_u = |u: &ControlPath<T>| {
            same_grid(u.grid(), grid)?;
            if u.dim() != k {
                return Err(Error::DimensionMismatch(format!(
                    "control has {} components, expected {k}",
                    u.dim()
                )));
            }
            Ok(())
        };
        match self {
            Self::OpenLoop(u) => check_u(u),
            Self::Feedback(theta) => check_theta(theta),
            Self::FeedbackPlusOpenLoop(theta, u) => {
                check_theta(theta)?;
                check_u(u)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub paths: usize,
    pub seed: u64,
    /// Worker cap; `None` uses the ambient rayon pool. Never changes results.
    pub threads: Option<usize>,
    /// Keep every state and control sample.
    pub record: bool,
    /// Also run each path on the twice-coarser grid with the summed increments.
    pub coarse_shadow: bool,
}

impl SimOptions {
    pub fn for_scenario<T: Real>(scenario: &Scenario<T>) -> Self {
        Self {
            paths: scenario.mc_paths,
            seed: scenario.seed,
            threads: None,
            record: false,
            coarse_shadow: false,
        }
    }
}

/// What each path contributes to cost estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary<T: Real> {
    pub terminal: DVector<T>,
    /// `Σ_i Δ(<Q x_i, x_i> + <R u_i, u_i>)`
    pub running: T,
    /// `Σ_i Δ aux(i, x_i, u_i)` for the optional auxiliary integrand.
    pub aux: T,
}

impl<T: Real> PathSummary<T> {
    /// `<G x(T), x(T)> + running`
    pub fn cost(&self, g: &DMatrix<T>) -> T {
        self.terminal.dot(&(g * &self.terminal)) + self.running
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    /// `m + 1` states
    pub states: Vec<DVector<T>>,
    /// `m + 1` controls; the last one is evaluated at `T` but never applied.
    pub controls: Vec<DVector<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T: Real> {
    pub n_paths: usize,
    pub seed: u64,
    pub grid: TimeGrid<T>,
    pub paths: Vec<PathSummary<T>>,
    /// Same paths on the grid with `m / 2` cells, driven by the same noise.
    pub coarse: Option<Vec<PathSummary<T>>>,
    pub trajectories: Option<Vec<Trajectory<T>>>,
}

impl<T: Real> PathEnsemble<T> {
    pub fn costs(&self, g: &DMatrix<T>) -> Vec<T> {
        self.paths.iter().map(|p| p.cost(g)).collect()
    }

    pub fn coarse_costs(&self, g: &DMatrix<T>) -> Option<Vec<T>> {
        self.coarse.as_ref().map(|c| c.iter().map(|p| p.cost(g)).collect())
    }

    /// `path, cost, x_0, x_1, ...` with the terminal state.
    pub fn write_summary_csv<W: std::io::Write>(&self, w: &mut W, g: &DMatrix<T>) -> std::io::Result<()> {
        let n = self.paths.first().map_or(0, |p| p.terminal.len());
        let mut header = vec!["path".to_string(), "cost".to_string()];
        header.extend((0..n).map(|j| format!("x_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for (i, p) in self.paths.iter().enumerate() {
            let mut row = vec![i.to_string(), fmt17(p.cost(g))];
            row.extend(p.terminal.iter().map(|&x| fmt17(x)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Long format `path, node, component, state`; empty unless recorded.
    pub fn write_states_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "path,node,component,state")?;
        for (p, tr) in self.trajectories.iter().flatten().enumerate() {
            write_long(w, p, &tr.states)?;
        }
        Ok(())
    }

    /// Long format `path, node, component, control`; empty unless recorded.
    pub fn write_controls_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "path,node,component,control")?;
        for (p, tr) in self.trajectories.iter().flatten().enumerate() {
            write_long(w, p, &tr.controls)?;
        }
        Ok(())
    }
}

fn write_long<T: Real, W: std::io::Write>(w: &mut W, path: usize, samples: &[DVector<T>]) -> std::io::Result<()> {
    for (node, v) in samples.iter().enumerate() {
        for (c, &x) in v.iter().enumerate() {
            writeln!(w, "{path},{node},{c},{}", fmt17(x))?;
        }
    }
    Ok(())
}

/// Sample mean and `std / sqrt(n)` (unbiased variance), summed in index order.
pub fn mean_stderr<T: Real>(values: &[T]) -> (T, T) {
    let n = values.len();
    if n == 0 {
        return (T::zero(), T::zero());
    }
    let nt = T::lit(n as f64);
    let mean = values.iter().fold(T::zero(), |a, &b| a + b) / nt;
    if n == 1 {
        return (mean, T::zero());
    }
    let ss = values.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean));
    (mean, (ss / (nt - T::one()) / nt).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate<T: Real> {
    pub mean: T,
    pub stderr: T,
    pub n_paths: usize,
    /// Moment-ODE value, present for deterministic open-loop policies.
    pub exact: Option<T>,
    /// Mean fine-minus-coarse cost, present when the coarse shadow was run.
    pub discretization: Option<T>,
}

/// Per-step auxiliary integrand `(node, x_i, u_i) -> value`.
pub type AuxFn<'a, T> = dyn Fn(usize, &DVector<T>, &DVector<T>) -> T + Sync + 'a;

pub fn simulate<T: Real, L: ControlLaw<T> + ?Sized>(
    scenario: &Scenario<T>,
    law: &L,
    opts: &SimOptions,
) -> Result<PathEnsemble<T>> {
    simulate_with_aux(scenario, law, opts, None)
}

pub fn simulate_with_aux<T: Real, L: ControlLaw<T> + ?Sized>(
    scenario: &Scenario<T>,
    law: &L,
    opts: &SimOptions,
    aux: Option<&AuxFn<'_, T>>,
) -> Result<PathEnsemble<T>> {
    let (n, k) = (scenario.state_dim(), scenario.control_dim());
    let grid = scenario.grid;
    law.check(&grid, n, k)?;
    if opts.paths == 0 {
        return Err(Error::Config("number of paths must be positive".into()));
    }
    let m = grid.steps();
    if opts.coarse_shadow && !m.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "coarse shadow needs an even step count, got {m}"
        )));
    }
    let fine = Stepper::new(scenario, grid);
    let coarse = if opts.coarse_shadow {
        Some(Stepper::new(scenario, grid.with_steps(m / 2)?))
    } else {
        None
    };

    let run = || -> Vec<Result<PathOutput<T>>> {
        (0..opts.paths)
            .into_par_iter()
            .map(|p| run_path(scenario, law, &fine, coarse.as_ref(), aux, opts, p))
            .collect()
    };
    let outputs = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(run),
        None => run(),
    };

    let mut paths = Vec::with_capacity(opts.paths);
    let mut coarse_paths = coarse.as_ref().map(|_| Vec::with_capacity(opts.paths));
    let mut trajectories = opts.record.then(|| Vec::with_capacity(opts.paths));
    for out in outputs {
        let out = out?;
        paths.push(out.fine);
        if let (Some(c), Some(s)) = (coarse_paths.as_mut(), out.coarse) {
            c.push(s);
        }
        if let (Some(t), Some(tr)) = (trajectories.as_mut(), out.trajectory) {
            t.push(tr);
        }
    }
    Ok(PathEnsemble {
        n_paths: opts.paths,
        seed: opts.seed,
        grid,
        paths,
        coarse: coarse_paths,
        trajectories,
    })
}

/// Grid-specific constants of the scheme.
struct Stepper<'a, T: Real> {
    h: T,
    expo: DVector<T>,
    cells: Vec<CellCoeffs<'a, T>>,
}

impl<'a, T: Real> Stepper<'a, T> {
    fn new(scenario: &'a Scenario<T>, grid: TimeGrid<T>) -> Self {
        let h = grid.step();
        Self {
            h,
            expo: scenario.model.exp_diag(h),
            cells: (0..grid.steps()).map(|i| scenario.coeffs.cell(&grid, i)).collect(),
        }
    }
}

/// Scratch buffers for one path on one grid.
struct Walker<T: Real> {
    x: DVector<T>,
    u: DVector<T>,
    drift: DVector<T>,
    noise: DVector<T>,
    qx: DVector<T>,
    ru: DVector<T>,
    running: T,
    aux: T,
}

impl<T: Real> Walker<T> {
    fn new(eta: &DVector<T>, k: usize) -> Self {
        let n = eta.len();
        Self {
            x: eta.clone(),
            u: DVector::zeros(k),
            drift: DVector::zeros(n),
            noise: DVector::zeros(n),
            qx: DVector::zeros(n),
            ru: DVector::zeros(k),
            running: T::zero(),
            aux: T::zero(),
        }
    }

    /// Evaluates the control at `node`, accumulates running cost and advances
    /// over one cell with Brownian increment `dw`.
    fn advance<L: ControlLaw<T> + ?Sized>(
        &mut self,
        law: &L,
        node: usize,
        stepper: &Stepper<'_, T>,
        cell: usize,
        dw: T,
        aux: Option<&AuxFn<'_, T>>,
    ) {
        let h = stepper.h;
        let cc = &stepper.cells[cell];
        law.control_into(node, &self.x, &mut self.u);

        self.qx.gemv(T::one(), cc.q, &self.x, T::zero());
        self.ru.gemv(T::one(), cc.r, &self.u, T::zero());
        self.running += h * (self.x.dot(&self.qx) + self.u.dot(&self.ru));
        if let Some(f) = aux {
            self.aux += h * f(node, &self.x, &self.u);
        }

        self.drift.copy_from(&self.x);
        self.drift.gemv(h, cc.a1, &self.x, T::one());
        self.drift.gemv(h, cc.b, &self.u, T::one());
        self.noise.gemv(T::one(), cc.c, &self.x, T::zero());
        self.noise.gemv(T::one(), cc.d, &self.u, T::one());
        self.drift.axpy(dw, &self.noise, T::one());
        self.x.copy_from(&self.drift);
        self.x.component_mul_assign(&stepper.expo);
    }

    fn summary(&self) -> PathSummary<T> {
        PathSummary {
            terminal: self.x.clone(),
            running: self.running,
            aux: self.aux,
        }
    }

    fn finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

struct PathOutput<T: Real> {
    fine: PathSummary<T>,
    coarse: Option<PathSummary<T>>,
    trajectory: Option<Trajectory<T>>,
}

/// Independent stream of standard normals for one path.
pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn run_path<T: Real, L: ControlLaw<T> + ?Sized>(
    scenario: &Scenario<T>,
    law: &L,
    fine: &Stepper<'_, T>,
    coarse: Option<&Stepper<'_, T>>,
    aux: Option<&AuxFn<'_, T>>,
    opts: &SimOptions,
    path: usize,
) -> Result<PathOutput<T>> {
    let m = scenario.grid.steps();
    let k = scenario.control_dim();
    let sqrt_h = fine.h.sqrt();
    let mut rng = path_rng(opts.seed, path);

    let mut walker = Walker::new(&scenario.eta, k);
    let mut shadow = coarse.map(|_| Walker::new(&scenario.eta, k));
    let mut trajectory = opts.record.then(|| Trajectory {
        states: Vec::with_capacity(m + 1),
        controls: Vec::with_capacity(m + 1),
    });
    let mut pending = T::zero();

    for i in 0..m {
        let dw = sqrt_h * T::lit(rng.sample::<f64, _>(StandardNormal));
        if let Some(tr) = trajectory.as_mut() {
            tr.states.push(walker.x.clone());
        }
        walker.advance(law, i, fine, i, dw, aux);
        if let Some(tr) = trajectory.as_mut() {
            tr.controls.push(walker.u.clone());
        }
        if !walker.finite() {
            return Err(Error::PathBlowUp { path, node: i + 1 });
        }
        if let (Some(s), Some(cs)) = (shadow.as_mut(), coarse) {
            pending += dw;
            if i % 2 == 1 {
                s.advance(law, i - 1, cs, i / 2, pending, aux);
                pending = T::zero();
                if !s.finite() {
                    return Err(Error::PathBlowUp { path, node: i + 1 });
                }
            }
        }
    }
    if let Some(tr) = trajectory.as_mut() {
        tr.states.push(walker.x.clone());
        law.control_into(m, &walker.x, &mut walker.u);
        tr.controls.push(walker.u.clone());
    }
    Ok(PathOutput {
        fine: walker.summary(),
        coarse: shadow.map(|s| s.summary()),
        trajectory,
    })
}

/// Mean and standard error of the per-path cost, plus the exact value for
/// deterministic policies.
pub fn estimate_cost<T: Real>(
    scenario: &Scenario<T>,
    policy: &ControlPolicy<T>,
    ensemble: &PathEnsemble<T>,
) -> CostEstimate<T> {
    let g = &scenario.coeffs.g;
    let costs = ensemble.costs(g);
    let (mean, stderr) = mean_stderr(&costs);
    let exact = match policy {
        ControlPolicy::OpenLoop(u) => exact_cost_deterministic(scenario, u).ok(),
        _ => None,
    };
    let discretization = ensemble.coarse_costs(g).map(|c| {
        let diff: Vec<T> = costs.iter().zip(&c).map(|(&f, &c)| f - c).collect();
        mean_stderr(&diff).0
    });
    CostEstimate {
        mean,
        stderr,
        n_paths: ensemble.n_paths,
        exact,
        discretization,
    }
}
