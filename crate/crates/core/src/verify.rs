//! Monte Carlo checks of a Riccati solution against the cost functional.
//!
//! Three things are measured on one set of Brownian paths:
//!
//! * the closed-loop cost `J(Θx)` against `<P(t0) η, η>`;
//! * for perturbed controls `u = Θx + v'`, the excess `J(u) - <P(t0) η, η>`
//!   against `E ∫ <K v', v'> ds` (completion of squares);
//! * the optimality margin `J(u) - J(Θx)`, paired path by path.
//!
//! The Euler scheme is first order in the step, so every comparison also
//! carries a discretization allowance: the paired difference between the run
//! and a shadow run on the twice-coarser grid with the same increments.

use crate::error::{Error, Result};
use crate::lyapunov::FeedbackPath;
use crate::riccati::{feedback_from, RiccatiSolution};
use crate::scalar::Real;
use crate::scenario::Scenario;
use crate::sde::{mean_stderr, simulate_with_aux, AuxFn, ControlPath, ControlPolicy, PathEnsemble, SimOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Band width, in combined standard errors, for every statistical check.
pub const Z_LIMIT: f64 = 4.0;

/// Relative allowance for solver and round-off error in z-score denominators,
/// matching the default Riccati stopping tolerance.
pub const ROUNDOFF: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions<T: Real> {
    /// Paths for the closed-loop value check.
    pub paths: usize,
    /// Paths for each perturbation run.
    pub perturbation_paths: usize,
    pub perturbations: usize,
    /// Include feedback deviations `δΘ x` besides open-loop `v`.
    pub feedback_deviations: bool,
    pub seed: u64,
    pub threads: Option<usize>,
    pub rank_tol: T,
    /// Added to `P` as `bias * I` before comparing; for exercising rejections.
    pub inject_bias: T,
}

impl<T: Real> VerifyOptions<T> {
    pub fn for_scenario(scenario: &Scenario<T>) -> Self {
        Self {
            paths: scenario.mc_paths,
            perturbation_paths: scenario.mc_paths.min(10_000),
            perturbations: 20,
            feedback_deviations: true,
            seed: scenario.seed,
            threads: None,
            rank_tol: T::tolerance(1e-10),
            inject_bias: T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    /// Deterministic piecewise-constant `v`.
    OpenLoop,
    /// `δΘ x + v`.
    Feedback,
}

impl PerturbationKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::OpenLoop => "open_loop",
            Self::Feedback => "feedback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRow<T: Real> {
    pub kind: PerturbationKind,
    pub amplitude: T,
    /// `mean J(u) - <P(t0) η, η>`
    pub excess: T,
    /// `mean ∫ <K v', v'>` over the same paths.
    pub predicted: T,
    /// Standard error of the per-path `cost - ∫<K v', v'>`.
    pub stderr: T,
    /// Discretization allowance for the identity check.
    pub bias: T,
    pub z: T,
    /// Paired `mean [J(u) - J(Θx)]`.
    pub margin: T,
    pub margin_stderr: T,
    pub margin_bias: T,
    pub margin_ok: bool,
}

impl<T: Real> PerturbationRow<T> {
    pub fn identity_ok(&self) -> bool {
        self.z.abs() <= T::lit(Z_LIMIT)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport<T: Real> {
    /// `<P(t0) η, η>` (including any injected bias).
    pub value: T,
    pub mc_mean: T,
    pub stderr: T,
    pub bias: T,
    pub z: T,
    pub n_paths: usize,
    pub perturbations: Vec<PerturbationRow<T>>,
}

impl<T: Real> ValueReport<T> {
    pub fn value_ok(&self) -> bool {
        self.z.abs() <= T::lit(Z_LIMIT)
    }

    /// Every z-score within the band and every margin non-negative up to it.
    pub fn all_ok(&self) -> bool {
        self.value_ok() && self.perturbations.iter().all(|p| p.identity_ok() && p.margin_ok)
    }
}

/// `(a - b) / sqrt(se^2 + bias^2 + floor^2)`, where the floor is a relative
/// round-off allowance so that exactly reproduced values score zero.
fn z_score<T: Real>(a: T, b: T, se: T, bias: T) -> T {
    let diff = a - b;
    let floor = T::tolerance(ROUNDOFF) * T::one().max(a.abs()).max(b.abs());
    diff / (se * se + bias * bias + floor * floor).sqrt()
}

/// Mean and standard error of `fine` plus `|mean f(fine) - mean f(coarse)|`.
fn paired<T: Real>(fine: &[T], coarse: Option<&[T]>) -> (T, T, T) {
    let (mean, se) = mean_stderr(fine);
    let bias = coarse.map_or(T::zero(), |c| (mean - mean_stderr(c).0).abs());
    (mean, se, bias)
}

/// Borrowed first `n` paths of a run.
struct RunView<'a, T: Real> {
    cost: &'a [T],
    coarse_cost: Option<&'a [T]>,
}

struct Run<T: Real> {
    cost: Vec<T>,
    coarse_cost: Option<Vec<T>>,
    aux: Vec<T>,
    coarse_aux: Option<Vec<T>>,
}

impl<T: Real> Run<T> {
    fn new(ens: PathEnsemble<T>, g: &DMatrix<T>) -> Self {
        let cost = ens.costs(g);
        let coarse_cost = ens.coarse_costs(g);
        let aux = ens.paths.iter().map(|p| p.aux).collect();
        let coarse_aux = ens.coarse.as_ref().map(|c| c.iter().map(|p| p.aux).collect());
        Self {
            cost,
            coarse_cost,
            aux,
            coarse_aux,
        }
    }

    fn prefix(&self, n: usize) -> RunView<'_, T> {
        RunView {
            cost: &self.cost[..n],
            coarse_cost: self.coarse_cost.as_deref().map(|c| &c[..n]),
        }
    }
}

fn zip_with<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Random perturbation: piecewise-constant `v` on four blocks, and a constant
/// gain deviation for the feedback kind.
fn draw_perturbation<T: Real, R: Rng>(
    rng: &mut R,
    scenario: &Scenario<T>,
    kind: PerturbationKind,
) -> Result<(T, Option<DMatrix<T>>, ControlPath<T>)> {
    let (n, k) = (scenario.state_dim(), scenario.control_dim());
    let m = scenario.grid.steps();
    let amplitude = T::lit(rng.random_range(0.2..1.0));
    let mut normal = || T::lit(rng.sample::<f64, _>(StandardNormal));
    let blocks: Vec<DVector<T>> = (0..4)
        .map(|_| DVector::from_fn(k, |_, _| normal() * amplitude))
        .collect();
    let gain = match kind {
        PerturbationKind::OpenLoop => None,
        PerturbationKind::Feedback => Some(DMatrix::from_fn(k, n, |_, _| normal() * amplitude * T::lit(0.5))),
    };
    let v = ControlPath::from_fn(scenario.grid, |i| blocks[(4 * i.min(m - 1)) / m].clone())?;
    Ok((amplitude, gain, v))
}

/// Runs the value, completion-of-squares and optimality checks.
pub fn verify_value_function<T: Real>(
    scenario: &Scenario<T>,
    solution: &RiccatiSolution<T>,
    opts: &VerifyOptions<T>,
) -> Result<ValueReport<T>> {
    let theta = feedback_from(solution, &scenario.coeffs, opts.rank_tol)?;
    if solution.grid().steps() != scenario.grid.steps() {
        return Err(Error::DimensionMismatch(
            "Riccati grid differs from scenario grid".into(),
        ));
    }
    let eta = &scenario.eta;
    let value = solution.value(eta) + opts.inject_bias * eta.norm_squared();
    let g = &scenario.coeffs.g;
    let shadow = scenario.grid.steps().is_multiple_of(2);
    let sim = |paths: usize| SimOptions {
        paths,
        seed: opts.seed,
        threads: opts.threads,
        record: false,
        coarse_shadow: shadow,
    };

    let closed = ControlPolicy::Feedback(theta.clone());
    let base = Run::new(simulate_with_aux(scenario, &closed, &sim(opts.paths), None)?, g);
    let (mc_mean, stderr, bias) = paired(&base.cost, base.coarse_cost.as_deref());
    let z = z_score(mc_mean, value, stderr, bias);

    // paths are keyed by index, so the first runs of a larger ensemble are the
    // same paths as a smaller one
    let extra;
    let reference = if opts.perturbation_paths <= opts.paths {
        base.prefix(opts.perturbation_paths)
    } else {
        extra = Run::new(
            simulate_with_aux(scenario, &closed, &sim(opts.perturbation_paths), None)?,
            g,
        );
        extra.prefix(opts.perturbation_paths)
    };

    let mut rng = crate::sde::path_rng(opts.seed, usize::MAX);
    let mut rows = Vec::with_capacity(opts.perturbations);
    for p in 0..opts.perturbations {
        let kind = if opts.feedback_deviations && p % 2 == 1 {
            PerturbationKind::Feedback
        } else {
            PerturbationKind::OpenLoop
        };
        let (amplitude, gain, v) = draw_perturbation(&mut rng, scenario, kind)?;
        rows.push(perturbation_row(
            scenario,
            solution,
            &theta,
            &reference,
            kind,
            amplitude,
            gain,
            v,
            value,
            &sim(opts.perturbation_paths),
        )?);
    }

    Ok(ValueReport {
        value,
        mc_mean,
        stderr,
        bias,
        z,
        n_paths: opts.paths,
        perturbations: rows,
    })
}

/// Completion-of-squares and margin check for the single control
/// `(Θ + gain) x + v`, with `Θ` taken from `solution`.
pub fn check_perturbation<T: Real>(
    scenario: &Scenario<T>,
    solution: &RiccatiSolution<T>,
    gain: Option<DMatrix<T>>,
    v: ControlPath<T>,
    opts: &VerifyOptions<T>,
) -> Result<PerturbationRow<T>> {
    let theta = feedback_from(solution, &scenario.coeffs, opts.rank_tol)?;
    let value = solution.value(&scenario.eta) + opts.inject_bias * scenario.eta.norm_squared();
    let sim = SimOptions {
        paths: opts.perturbation_paths,
        seed: opts.seed,
        threads: opts.threads,
        record: false,
        coarse_shadow: scenario.grid.steps().is_multiple_of(2),
    };
    let closed = ControlPolicy::Feedback(theta.clone());
    let base = Run::new(simulate_with_aux(scenario, &closed, &sim, None)?, &scenario.coeffs.g);
    let kind = if gain.is_some() {
        PerturbationKind::Feedback
    } else {
        PerturbationKind::OpenLoop
    };
    let amplitude = v.values().iter().fold(T::zero(), |a, x| a.max(x.amax()));
    perturbation_row(
        scenario,
        solution,
        &theta,
        &base.prefix(opts.perturbation_paths),
        kind,
        amplitude,
        gain,
        v,
        value,
        &sim,
    )
}

#[allow(clippy::too_many_arguments)]
fn perturbation_row<T: Real>(
    scenario: &Scenario<T>,
    solution: &RiccatiSolution<T>,
    theta: &FeedbackPath<T>,
    reference: &RunView<'_, T>,
    kind: PerturbationKind,
    amplitude: T,
    gain: Option<DMatrix<T>>,
    v: ControlPath<T>,
    value: T,
    sim: &SimOptions,
) -> Result<PerturbationRow<T>> {
    let g = &scenario.coeffs.g;
    let gain_path = match &gain {
        Some(dg) => theta.plus(&FeedbackPath::constant(*theta.grid(), dg.clone())),
        None => theta.clone(),
    };
    let policy = ControlPolicy::FeedbackPlusOpenLoop(gain_path, v);
    // v' = u - Θ_i x_i, weighted by K(s_i)
    let aux = |node: usize, x: &DVector<T>, u: &DVector<T>| {
        let mut dev = u.clone();
        dev.gemv(-T::one(), theta.node(node), x, T::one());
        dev.dot(&(&solution.k[node] * &dev))
    };
    let aux: &AuxFn<'_, T> = &aux;
    let run = Run::new(simulate_with_aux(scenario, &policy, sim, Some(aux))?, g);

    let net = zip_with(&run.cost, &run.aux, |c, a| c - a);
    let coarse_net = match (&run.coarse_cost, &run.coarse_aux) {
        (Some(c), Some(a)) => Some(zip_with(c, a, |c, a| c - a)),
        _ => None,
    };
    let (net_mean, stderr, bias) = paired(&net, coarse_net.as_deref());
    let excess = mean_stderr(&run.cost).0 - value;
    let predicted = mean_stderr(&run.aux).0;
    let z = z_score(net_mean, value, stderr, bias);

    let diff = zip_with(&run.cost, reference.cost, |a, b| a - b);
    let coarse_diff = match (&run.coarse_cost, reference.coarse_cost) {
        (Some(a), Some(b)) => Some(zip_with(a, b, |a, b| a - b)),
        _ => None,
    };
    let (margin, margin_stderr, margin_bias) = paired(&diff, coarse_diff.as_deref());
    let band = T::lit(Z_LIMIT) * (margin_stderr * margin_stderr + margin_bias * margin_bias).sqrt();
    Ok(PerturbationRow {
        kind,
        amplitude,
        excess,
        predicted,
        stderr,
        bias,
        z,
        margin,
        margin_stderr,
        margin_bias,
        margin_ok: margin >= -band,
    })
}
