//! Uniform-convexity certificates for the cost functional `u ↦ J(0, 0; u)`.
//!
//! * [`certify_via_riccati`]: strong regularity of the Riccati solution found
//!   by the successive approximation, or a `K_j` breakdown as evidence against.
//! * [`hessian_lambda_min`]: the Gram matrix of `J(0, 0; ·)` on piecewise-constant
//!   deterministic controls. It is a necessary condition only, since adapted
//!   controls are not spanned by any deterministic basis.
//! * [`check_classical`]: `G ⪰ 0`, `Q ⪰ 0`, `R ⪰ δI`.
//! * [`check_as34`]: invertible `D` and a terminal weight dominating
//!   `𝒞₀ (sup ‖R‖ + ε₀)`, with `𝒞₀` estimated numerically.

use crate::error::{Error, Result};
use crate::linalg::lambda_min;
use crate::lyapunov::FeedbackPath;
use crate::moments::{mean_path_from, moments_from, MomentState};
use crate::riccati::{riccati_iterate, CertificateKind, RiccatiOptions, RiccatiSolution};
use crate::scalar::Real;
use crate::scenario::Scenario;
use crate::sde::ControlPath;
use crate::spectral::{CoefficientSet, Schedule};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// PSD slack for `G` and `Q` in the classical test.
pub const CLASSICAL_TOL: f64 = 1e-12;

/// Floor on `σ_min(D)` standing in for a bounded inverse.
pub const D_SINGULAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Witness {
    Riccati,
    Classical,
    As34,
}

impl Witness {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Riccati => "Riccati",
            Self::Classical => "Classical",
            Self::As34 => "AS34",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict<T: Real> {
    CertifiedConvex { lambda: T, witness: Witness },
    EvidenceAgainst { witness: String },
    Inconclusive { reason: String },
}

impl<T: Real> Verdict<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CertifiedConvex { .. } => "CertifiedConvex",
            Self::EvidenceAgainst { .. } => "EvidenceAgainst",
            Self::Inconclusive { .. } => "Inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport<T: Real> {
    pub verdict: Verdict<T>,
    pub hessian_lambda_min: Option<T>,
    /// Estimated `𝒞₀` from the terminal-state Gram pair.
    pub c0_estimate: Option<T>,
    /// Every certificate that held, not only the one named in the verdict.
    pub certificates: Vec<(Witness, T)>,
    pub details: Vec<String>,
}

impl<T: Real> ConvexityReport<T> {
    fn from_verdict(verdict: Verdict<T>) -> Self {
        let certificates = match &verdict {
            Verdict::CertifiedConvex { lambda, witness } => vec![(*witness, *lambda)],
            _ => Vec::new(),
        };
        Self {
            verdict,
            hessian_lambda_min: None,
            c0_estimate: None,
            certificates,
            details: Vec::new(),
        }
    }
}

fn riccati_verdict<T: Real>(
    scenario: &Scenario<T>,
    opts: &RiccatiOptions<T>,
) -> (Verdict<T>, Option<RiccatiSolution<T>>) {
    match riccati_iterate(&scenario.model, &scenario.coeffs, &scenario.grid, opts) {
        Ok(sol) => {
            let verdict = match &sol.certificate.kind {
                CertificateKind::StronglyRegular { lambda } => Verdict::CertifiedConvex {
                    lambda: *lambda,
                    witness: Witness::Riccati,
                },
                other => Verdict::Inconclusive {
                    reason: format!("iteration converged but the solution is {}", other.name()),
                },
            };
            (verdict, Some(sol))
        }
        Err(Error::KNotInvertible {
            iteration,
            node,
            lambda_min,
        }) => (
            Verdict::EvidenceAgainst {
                witness: format!("K_{iteration} loses definiteness at node {node} (lambda_min = {lambda_min:e})"),
            },
            None,
        ),
        Err(e) => (Verdict::Inconclusive { reason: e.to_string() }, None),
    }
}

/// Runs the successive approximation and maps its outcome to a verdict.
pub fn certify_via_riccati<T: Real>(scenario: &Scenario<T>, opts: &RiccatiOptions<T>) -> ConvexityReport<T> {
    ConvexityReport::from_verdict(riccati_verdict(scenario, opts).0)
}

/// Partition of the `m` cells into `blocks` contiguous groups of near-equal length.
fn block_ranges(m: usize, blocks: usize) -> Vec<(usize, usize)> {
    (0..blocks).map(|b| (b * m / blocks, (b + 1) * m / blocks)).collect()
}

/// Piecewise-constant controls: unit value in one component on one block of cells.
struct ControlBasis<T: Real> {
    k: usize,
    ranges: Vec<(usize, usize)>,
    h: T,
}

impl<T: Real> ControlBasis<T> {
    fn new(scenario: &Scenario<T>, size: usize) -> Result<Self> {
        let k = scenario.control_dim();
        let m = scenario.grid.steps();
        if size == 0 || !size.is_multiple_of(k) || size / k > m {
            return Err(Error::DimensionMismatch(format!(
                "basis size {size} must be a positive multiple of k = {k} and at most m k = {}",
                m * k
            )));
        }
        Ok(Self {
            k,
            ranges: block_ranges(m, size / k),
            h: scenario.grid.step(),
        })
    }

    fn len(&self) -> usize {
        self.ranges.len() * self.k
    }

    fn first_cell(&self, a: usize) -> usize {
        self.ranges[a / self.k].0
    }

    /// `‖e_a‖²_{L²}`
    fn weight(&self, a: usize) -> T {
        let (lo, hi) = self.ranges[a / self.k];
        self.h * T::lit((hi - lo) as f64)
    }

    /// `Σ c_j e_{a_j}` as a control path.
    fn combine(&self, grid: crate::spectral::TimeGrid<T>, terms: &[(usize, T)]) -> ControlPath<T> {
        let mut values = vec![DVector::zeros(self.k); grid.steps() + 1];
        for &(a, c) in terms {
            let (lo, hi) = self.ranges[a / self.k];
            for v in &mut values[lo..hi] {
                v[a % self.k] += c;
            }
        }
        ControlPath::new(grid, values).expect("basis combinations are finite and sized")
    }
}

/// Symmetric bilinear form on the basis, `F(e_a, e_b)`, from a quadratic
/// `q(u)` with `q(0) = 0` by polarization. Pairs are evaluated in parallel and
/// written back in index order.
fn polarized_gram<T: Real>(
    basis: &ControlBasis<T>,
    q: impl Fn(&[(usize, T)]) -> Result<T> + Sync,
) -> Result<DMatrix<T>> {
    let nb = basis.len();
    let diag: Vec<T> = (0..nb)
        .into_par_iter()
        .map(|a| q(&[(a, T::one())]))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..nb).flat_map(|a| (a + 1..nb).map(move |b| (a, b))).collect();
    let off: Vec<T> = pairs
        .par_iter()
        .map(|&(a, b)| q(&[(a, T::one()), (b, T::one())]))
        .collect::<Result<_>>()?;
    let mut h = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
    let half = T::lit(0.5);
    for (&(a, b), &j) in pairs.iter().zip(&off) {
        let v = half * (j - diag[a] - diag[b]);
        h[(a, b)] = v;
        h[(b, a)] = v;
    }
    Ok(h)
}

/// Cost-type quadratic `u ↦ <G', M(T)> + ∫ <Q', M> + <R' u, u>` with zero
/// initial state, integrated from the first cell where `u` is non-zero.
fn zero_start_quadratic<'s, T: Real>(
    scenario: &'s Scenario<T>,
    basis: &'s ControlBasis<T>,
    terminal: &'s DMatrix<T>,
) -> impl Fn(&[(usize, T)]) -> Result<T> + Sync + 's {
    let n = scenario.state_dim();
    move |terms: &[(usize, T)]| {
        let first = terms.iter().map(|&(a, _)| basis.first_cell(a)).min().unwrap_or(0);
        let u = basis.combine(scenario.grid, terms);
        let tm = moments_from(scenario, &u, first, MomentState::initial(&DVector::zeros(n)))?;
        Ok(tm.cost(terminal))
    }
}

fn zero_eta<T: Real>(scenario: &Scenario<T>) -> Result<Scenario<T>> {
    scenario.with_eta(DVector::zeros(scenario.state_dim()))
}

/// `W^{-1/2} H W^{-1/2}` for the diagonal basis weights `W`.
fn normalize<T: Real>(h: &DMatrix<T>, basis: &ControlBasis<T>) -> DMatrix<T> {
    let w = DVector::from_fn(basis.len(), |a, _| T::one() / basis.weight(a).sqrt());
    let mut out = h.clone();
    crate::linalg::scale_rows_cols(&mut out, &w, &w);
    crate::spectral::symmetrize(&out)
}

/// Smallest eigenvalue of the Gram matrix of `J(0, 0; ·)` on `basis_size`
/// piecewise-constant controls, normalized to the `L²` inner product.
///
/// `basis_size` must be a multiple of `k`; the cells are split into
/// `basis_size / k` near-equal blocks.
pub fn hessian_lambda_min<T: Real>(scenario: &Scenario<T>, basis_size: usize) -> Result<T> {
    let sc = zero_eta(scenario)?;
    let basis = ControlBasis::new(&sc, basis_size)?;
    let gram = polarized_gram(&basis, zero_start_quadratic(&sc, &basis, &sc.coeffs.g))?;
    Ok(lambda_min(&normalize(&gram, &basis)))
}

/// `δ = min_s λ_min(R(s))` when `G ⪰ 0`, `Q(s) ⪰ 0` and `δ > 0`.
pub fn check_classical<T: Real>(coeffs: &CoefficientSet<T>) -> Option<T> {
    let tol = T::tolerance(CLASSICAL_TOL);
    if lambda_min(&coeffs.g) < -tol {
        return None;
    }
    if coeffs.q.values().any(|q| lambda_min(q) < -tol) {
        return None;
    }
    let delta = coeffs
        .r
        .values()
        .map(lambda_min)
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    (delta > T::zero()).then_some(delta)
}

/// `σ_min(D(s))` over the grid nodes, with the node where it is attained.
fn d_sigma_min<T: Real>(scenario: &Scenario<T>) -> Result<(usize, T)> {
    let (rows, cols) = scenario.coeffs.d.shape();
    if rows != cols {
        return Err(Error::DNotSquare { rows, cols });
    }
    let grid = &scenario.grid;
    let mut worst = (0, T::max_value().unwrap());
    for i in 0..=grid.steps() {
        let s = scenario.coeffs.cell(grid, i).d.clone().singular_values().min();
        if s < worst.1 {
            worst = (i, s);
        }
    }
    Ok(worst)
}

/// `𝒞₀ = sup ‖u‖²_{L²} / E‖x(T)‖²` over the span of `basis_size` controls,
/// from the generalized Rayleigh quotient of the Gram pair. Infinite when the
/// terminal-state Gram matrix is singular.
pub fn estimate_c0<T: Real>(scenario: &Scenario<T>, basis_size: usize) -> Result<T> {
    let mut sc = zero_eta(scenario)?;
    let (n, k) = (sc.state_dim(), sc.control_dim());
    sc.coeffs.q = Schedule::zeros(n, n);
    sc.coeffs.r = Schedule::zeros(k, k);
    let identity = DMatrix::identity(n, n);
    let basis = ControlBasis::new(&sc, basis_size)?;
    let gram = polarized_gram(&basis, zero_start_quadratic(&sc, &basis, &identity))?;
    let mu = lambda_min(&normalize(&gram, &basis));
    let floor = T::tolerance(1e-14) * T::one().max(gram.amax());
    Ok(if mu > floor {
        T::one() / mu
    } else {
        T::max_value().unwrap()
    })
}

/// Default basis for the `𝒞₀` estimate: every cell up to 50 blocks per component.
pub fn default_c0_basis<T: Real>(scenario: &Scenario<T>) -> usize {
    scenario.grid.steps().min(50) * scenario.control_dim()
}

/// `ε₀ = 0.1 ‖R‖`, or 0.1 when `R` vanishes.
pub fn default_eps0<T: Real>(coeffs: &CoefficientSet<T>) -> T {
    let r = coeffs.r_norm_sup();
    if r > T::zero() {
        T::lit(0.1) * r
    } else {
        T::lit(0.1)
    }
}

/// Certificate from invertible `D` and `λ_min(G) > 𝒞₀ (sup ‖R‖ + ε₀)`.
///
/// `Ok(None)` when `D` is fine but the inequality fails. The returned report
/// carries the `𝒞₀` estimate either way through [`as34_report`].
pub fn check_as34<T: Real>(scenario: &Scenario<T>, eps0: T) -> Result<Option<ConvexityReport<T>>> {
    let report = as34_report(scenario, eps0, default_c0_basis(scenario))?;
    Ok(matches!(report.verdict, Verdict::CertifiedConvex { .. }).then_some(report))
}

/// Full `(AS3)/(AS4)` evaluation: certified or inconclusive, with `𝒞₀`.
pub fn as34_report<T: Real>(scenario: &Scenario<T>, eps0: T, basis_size: usize) -> Result<ConvexityReport<T>> {
    let (node, sigma) = d_sigma_min(scenario)?;
    if sigma < T::tolerance(D_SINGULAR_FLOOR) {
        return Err(Error::DSingular {
            node,
            sigma_min: sigma.as_f64(),
        });
    }
    let c0 = estimate_c0(scenario, basis_size)?;
    let gmin = lambda_min(&scenario.coeffs.g);
    let bound = c0 * (scenario.coeffs.r_norm_sup() + eps0);
    let verdict = if gmin > bound {
        Verdict::CertifiedConvex {
            lambda: eps0,
            witness: Witness::As34,
        }
    } else {
        Verdict::Inconclusive {
            reason: format!("lambda_min(G) = {gmin} does not exceed C0 (|R| + eps0) = {bound}"),
        }
    };
    let mut report = ConvexityReport::from_verdict(verdict);
    report.c0_estimate = Some(c0);
    report.details.push(format!(
        "numerical AS34: sigma_min(D) = {sigma} at node {node}, C0 = {c0}, eps0 = {eps0}, basis = {basis_size}"
    ));
    Ok(report)
}

/// Matrix of `u ↦ u - Θ x(u)` on the full per-cell basis, with `x` the
/// noiseless mean response from zero initial state. Row and column index
/// `i k + c` stands for cell `i`, component `c`.
pub fn assemble_control_transform<T: Real>(scenario: &Scenario<T>, theta: &FeedbackPath<T>) -> Result<DMatrix<T>> {
    let (n, k) = (scenario.state_dim(), scenario.control_dim());
    let grid = scenario.grid;
    let m = grid.steps();
    if theta.shape() != (k, n) || theta.grid().steps() != m {
        return Err(Error::DimensionMismatch("feedback does not match the scenario".into()));
    }
    let size = m * k;
    let columns: Vec<DVector<T>> = (0..size)
        .into_par_iter()
        .map(|col| {
            let (j, c) = (col / k, col % k);
            let mut values = vec![DVector::zeros(k); m + 1];
            values[j][c] = T::one();
            let u = ControlPath::new(grid, values)?;
            let xs = mean_path_from(scenario, &u, j, DVector::zeros(n))?;
            let mut out = DVector::zeros(size);
            out[col] = T::one();
            for i in j + 1..m {
                let thx = theta.node(i) * &xs[i];
                for r in 0..k {
                    out[i * k + r] -= thx[r];
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&columns))
}

/// `c₀ = ‖𝔏^{-1}‖₂^{-2} = σ_min(𝔏)²` for the control transform above.
pub fn control_transform_conditioning<T: Real>(scenario: &Scenario<T>, theta: &FeedbackPath<T>) -> Result<T> {
    let l = assemble_control_transform(scenario, theta)?;
    let sigma = l.singular_values().min();
    if !(sigma > T::tolerance(1e-14)) || !sigma.is_finite() {
        return Err(Error::SingularTransform);
    }
    Ok(sigma * sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityOptions<T: Real> {
    pub riccati: RiccatiOptions<T>,
    /// Basis size for the Hessian estimate; must be a multiple of `k`.
    pub hessian_basis: usize,
    /// Basis size for `𝒞₀`.
    pub c0_basis: usize,
    pub eps0: T,
}

impl<T: Real> ConvexityOptions<T> {
    pub fn for_scenario(scenario: &Scenario<T>) -> Self {
        Self {
            riccati: RiccatiOptions::default(),
            hessian_basis: scenario.grid.steps().min(20) * scenario.control_dim(),
            c0_basis: default_c0_basis(scenario),
            eps0: default_eps0(&scenario.coeffs),
        }
    }
}

/// Runs every detector. The verdict comes from the Riccati route when it is
/// decisive, then from the classical test, then from `(AS3)/(AS4)`.
pub fn assess_convexity<T: Real>(scenario: &Scenario<T>, opts: &ConvexityOptions<T>) -> ConvexityReport<T> {
    let (verdict, solution) = riccati_verdict(scenario, &opts.riccati);
    let mut report = ConvexityReport::from_verdict(verdict);
    let mut details = Vec::new();

    if let Some(sol) = &solution {
        if matches!(sol.certificate.kind, CertificateKind::StronglyRegular { .. }) {
            match control_transform_conditioning(scenario, &sol.theta) {
                Ok(c0) => details.push(format!("control transform c0 = {c0}")),
                Err(e) => details.push(format!("control transform: {e}")),
            }
        }
    }

    match hessian_lambda_min(scenario, opts.hessian_basis) {
        Ok(h) => report.hessian_lambda_min = Some(h),
        Err(e) => details.push(format!("hessian: {e}")),
    }

    if let Some(delta) = check_classical(&scenario.coeffs) {
        report.certificates.push((Witness::Classical, delta));
        if matches!(report.verdict, Verdict::Inconclusive { .. }) {
            report.verdict = Verdict::CertifiedConvex {
                lambda: delta,
                witness: Witness::Classical,
            };
        }
    }

    if scenario.coeffs.d.shape().0 == scenario.coeffs.d.shape().1 {
        match as34_report(scenario, opts.eps0, opts.c0_basis) {
            Ok(r) => {
                report.c0_estimate = r.c0_estimate;
                details.extend(r.details);
                if let Verdict::CertifiedConvex { lambda, .. } = r.verdict {
                    report.certificates.push((Witness::As34, lambda));
                    if matches!(report.verdict, Verdict::Inconclusive { .. }) {
                        report.verdict = r.verdict;
                    }
                }
            }
            Err(e) => details.push(format!("AS34: {e}")),
        }
    } else {
        details.push("AS34: D is not square".into());
    }

    report.details.extend(details);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{SpectralModel, TimeGrid};

    fn scalar(b: f64, d: f64, q: f64, r: f64, g: f64, m: usize) -> Scenario<f64> {
        let one = |x: f64| DMatrix::from_element(1, 1, x);
        let coeffs = CoefficientSet::constant(one(0.0), one(b), one(0.0), one(d), one(q), one(r), one(g)).unwrap();
        let model = SpectralModel::new(DVector::from_element(1, 0.0), 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, m).unwrap();
        Scenario::new(model, grid, coeffs, DVector::from_element(1, 1.0), 0, 10).unwrap()
    }

    #[test]
    fn block_ranges_cover_cells() {
        assert_eq!(block_ranges(10, 3), vec![(0, 3), (3, 6), (6, 10)]);
        assert_eq!(block_ranges(4, 4), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn pure_control_cost_has_unit_hessian() {
        let sc = scalar(0.0, 0.0, 0.0, 1.0, 0.0, 12);
        let h = hessian_lambda_min(&sc, 5).unwrap();
        assert!((h - 1.0).abs() < 1e-12, "{h}");
    }

    #[test]
    fn negative_weight_gives_negative_hessian() {
        let sc = scalar(0.0, 0.0, 0.0, -1.0, 0.0, 10);
        assert!((hessian_lambda_min(&sc, 10).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_size_is_validated() {
        let sc = scalar(0.0, 0.0, 0.0, 1.0, 0.0, 10);
        assert!(matches!(hessian_lambda_min(&sc, 11), Err(Error::DimensionMismatch(_))));
        assert!(matches!(hessian_lambda_min(&sc, 0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn classical_examples() {
        let i = DMatrix::<f64>::identity(2, 2);
        let z = DMatrix::zeros(2, 2);
        let c = CoefficientSet::constant(
            z.clone(),
            z.clone(),
            z.clone(),
            z.clone(),
            i.clone(),
            &i * 2.0,
            i.clone(),
        )
        .unwrap();
        assert_eq!(check_classical(&c), Some(2.0));
        let indef = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let c =
            CoefficientSet::constant(z.clone(), z.clone(), z.clone(), z.clone(), i.clone(), indef, i.clone()).unwrap();
        assert_eq!(check_classical(&c), None);
        let mut g = DMatrix::identity(2, 2);
        g[(1, 1)] = -1e-15;
        let c = CoefficientSet::constant(z.clone(), z.clone(), z.clone(), z, i.clone(), i, g).unwrap();
        assert_eq!(check_classical(&c), Some(1.0));
    }

    #[test]
    fn singular_d_is_reported() {
        let mut sc = scalar(0.0, 1.0, 0.0, -0.5, 1.0, 10);
        sc.coeffs.d = Schedule::piecewise(vec![
            (0.0, DMatrix::from_element(1, 1, 1.0)),
            (0.5, DMatrix::from_element(1, 1, 0.0)),
        ])
        .unwrap();
        assert!(matches!(check_as34(&sc, 0.4), Err(Error::DSingular { node: 5, .. })));
    }

    #[test]
    fn non_square_d_is_reported() {
        let z = |r, c| DMatrix::<f64>::zeros(r, c);
        let coeffs = CoefficientSet::constant(
            z(2, 2),
            z(2, 1),
            z(2, 2),
            z(2, 1),
            z(2, 2),
            DMatrix::identity(1, 1),
            z(2, 2),
        )
        .unwrap();
        let model = SpectralModel::new(DVector::from_vec(vec![-1.0, -4.0]), 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let sc = Scenario::new(model, grid, coeffs, DVector::zeros(2), 0, 10).unwrap();
        assert!(matches!(
            check_as34(&sc, 0.1),
            Err(Error::DNotSquare { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn zero_terminal_weight_is_not_certified() {
        let sc = scalar(0.0, 1.0, 0.0, -0.5, 0.0, 10);
        assert!(check_as34(&sc, 0.4).unwrap().is_none());
    }

    #[test]
    fn zero_feedback_transform_is_identity() {
        let sc = scalar(1.0, 0.0, 0.0, 1.0, 1.0, 8);
        let th = FeedbackPath::zeros(sc.grid, 1, 1);
        let l = assemble_control_transform(&sc, &th).unwrap();
        assert_eq!(l, DMatrix::identity(8, 8));
        assert_eq!(control_transform_conditioning(&sc, &th).unwrap(), 1.0);
    }
}
