//! Riccati equation
//!
//! ```text
//! dP/ds + P(A + A1) + (A + A1)^T P + C^T P C + Q - L^T K^† L = 0,   P(T) = G
//! K = R + D^T P D,   L = B^T P + D^T P C
//! ```
//!
//! Two constructions are provided. [`riccati_iterate`] runs the monotone
//! successive-approximation scheme: each sweep freezes the gain
//! `Θ_j = -K_j^{-1} L_j` of the previous iterate and solves a linear
//! Lyapunov equation for the next one. It converges (with factorial rate)
//! exactly when the cost is uniformly convex, and breaks down with a witness
//! when some `K_j` loses definiteness. [`riccati_direct`] integrates the
//! quadratic ODE itself with `K^†` and serves as an independent oracle.

use crate::error::{Error, Result};
use crate::integrate::{ensure_finite, frame_midpoint, lawson_step, ExpFrame};
use crate::io::{fmt17, matrix_header, push_matrix};
use crate::linalg::{lambda_min, pseudo_inverse, PseudoInverse};
use crate::lyapunov::{solve_lyapunov, FeedbackPath, MatrixPath};
use crate::scalar::Real;
use crate::spectral::{symmetrize, CellCoeffs, CoefficientSet, SpectralModel, TimeGrid};
use nalgebra::{DMatrix, DVector};

/// Smallest grid accepted by the Riccati solvers; the residual needs interior stencils.
pub const MIN_STEPS: usize = 4;

/// PSD / range slack used by the regularity classification.
pub const REGULARITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions<T: Real> {
    /// Stopping tolerance on `sup_s ||P_j(s) - P_{j+1}(s)||_F`.
    pub tol: T,
    pub max_iter: usize,
    /// Relative eigenvalue cutoff for pseudo-inverses and invertibility tests.
    pub rank_tol: T,
}

impl<T: Real> Default for RiccatiOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::tolerance(1e-9),
            max_iter: 50,
            rank_tol: T::tolerance(1e-10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CertificateKind<T: Real> {
    StronglyRegular { lambda: T },
    Regular,
    NotCertified { reason: String },
}

impl<T: Real> CertificateKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::StronglyRegular { .. } => "StronglyRegular",
            Self::Regular => "Regular",
            Self::NotCertified { .. } => "NotCertified",
        }
    }

    pub fn is_certified(&self) -> bool {
        !matches!(self, Self::NotCertified { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityCertificate<T: Real> {
    pub kind: CertificateKind<T>,
    /// `max_s ||(I - K K^†) L||_F`
    pub range_defect: T,
    /// `min_s lambda_min(K(s))`
    pub kmin: T,
    /// `min_s lambda_min(P(s))`
    pub pmin: T,
    /// `max_s ||K^† L||_F`
    pub gain_sup: T,
    /// Largest null-space dimension of `K` over the grid. When positive, any
    /// `Θ = -K^†L + (I - K^†K)θ` is an equally valid feedback; this crate
    /// always returns the minimal-norm member.
    pub nullity: usize,
}

/// Per-sweep diagnostics of the successive approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateStats<T: Real> {
    /// `sup_s ||P_j - P_{j+1}||_F`
    pub update: T,
    /// `min_s lambda_min(K_j)`
    pub kmin: T,
    /// `min_s lambda_min(P_j)`
    pub pmin: T,
    /// `min_s lambda_min(P_j - P_{j+1})`; `None` for the base sweep.
    pub monotone_margin: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<T: Real> {
    pub p: MatrixPath<T>,
    /// `K(s_i)`, k × k
    pub k: Vec<DMatrix<T>>,
    /// `L(s_i)`, k × n
    pub l: Vec<DMatrix<T>>,
    pub theta: FeedbackPath<T>,
    pub certificate: RegularityCertificate<T>,
    pub iterations: usize,
    /// Max interior-node Riccati residual with `dP/ds` from centered differences.
    pub residual: T,
    /// Centered-difference truncation estimate for the residual.
    pub truncation_estimate: T,
    pub history: Vec<IterateStats<T>>,
}

impl<T: Real> RiccatiSolution<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        self.p.grid()
    }

    /// `<P(t0) eta, eta>`
    pub fn value(&self, eta: &DVector<T>) -> T {
        eta.dot(&(self.p.first() * eta))
    }

    /// Residual acceptance: `residual <= max(tol, 10 * truncation estimate)`.
    pub fn residual_ok(&self, tol: T) -> bool {
        self.residual <= tol.max(T::lit(10.0) * self.truncation_estimate)
    }

    /// Writes `time, P..., K..., L..., theta...` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let n = self.p.dim();
        let k = self.k[0].nrows();
        let mut header = vec!["time".to_string()];
        header.extend(matrix_header("P", n, n));
        header.extend(matrix_header("K", k, k));
        header.extend(matrix_header("L", k, n));
        header.extend(matrix_header("theta", k, n));
        writeln!(w, "{}", header.join(","))?;
        for (i, t) in self.grid().nodes().into_iter().enumerate() {
            let mut row = vec![fmt17(t)];
            push_matrix(&mut row, self.p.node(i));
            push_matrix(&mut row, &self.k[i]);
            push_matrix(&mut row, &self.l[i]);
            push_matrix(&mut row, self.theta.node(i));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `(K, L)` for a given `P` and cell coefficients.
pub fn k_and_l<T: Real>(cc: &CellCoeffs<'_, T>, p: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let pd = p * cc.d;
    let k = symmetrize(&(cc.r + cc.d.transpose() * &pd));
    let l = cc.b.transpose() * p + pd.transpose() * cc.c;
    (k, l)
}

fn check_inputs<T: Real>(model: &SpectralModel<T>, coeffs: &CoefficientSet<T>, grid: &TimeGrid<T>) -> Result<()> {
    if coeffs.state_dim() != model.dim() {
        return Err(Error::DimensionMismatch("coefficients and model disagree on n".into()));
    }
    if grid.steps() < MIN_STEPS {
        return Err(Error::Config(format!(
            "grid has {} steps, Riccati solvers need at least {MIN_STEPS}",
            grid.steps()
        )));
    }
    Ok(())
}

/// Inverse-based gain `-K^{-1}L` for a strongly positive `K`; `Err(lambda_min)` otherwise.
fn strict_gain<T: Real>(cc: &CellCoeffs<'_, T>, p: &DMatrix<T>, rank_tol: T) -> Result<(DMatrix<T>, T), T> {
    let (k, l) = k_and_l(cc, p);
    let kmin = lambda_min(&k);
    let threshold = rank_tol * T::one().max(k.amax());
    if !(kmin > threshold) {
        return Err(kmin);
    }
    match k.cholesky() {
        Some(ch) => Ok((-ch.solve(&l), kmin)),
        None => Err(kmin),
    }
}

/// Successive approximation `P_0 -> Θ_0 -> P_1 -> ...` until the sup-node
/// update drops below `opts.tol`.
pub fn riccati_iterate<T: Real>(
    model: &SpectralModel<T>,
    coeffs: &CoefficientSet<T>,
    grid: &TimeGrid<T>,
    opts: &RiccatiOptions<T>,
) -> Result<RiccatiSolution<T>> {
    check_inputs(model, coeffs, grid)?;
    if !(opts.tol > T::zero()) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let m = grid.steps();
    let (n, k) = (model.dim(), coeffs.control_dim());
    let mono_tol = T::tolerance(REGULARITY_TOL);

    let mut p = solve_lyapunov(model, coeffs, &FeedbackPath::zeros(*grid, k, n), grid)?;
    let mut history = Vec::new();

    for j in 0..opts.max_iter {
        let mut nodes = Vec::with_capacity(m + 1);
        let mut kmin = T::max_value().unwrap();
        for i in 0..=m {
            let cc = coeffs.cell(grid, i);
            let (gain, km) = strict_gain(&cc, p.node(i), opts.rank_tol).map_err(|lm| Error::KNotInvertible {
                iteration: j,
                node: i,
                lambda_min: lm.as_f64(),
            })?;
            kmin = kmin.min(km);
            nodes.push(gain);
        }
        let mut mids = Vec::with_capacity(m);
        for i in 0..m {
            let cc = coeffs.cell(grid, i);
            let (gain, _) = strict_gain(&cc, &p.mid(i), opts.rank_tol).map_err(|lm| Error::KNotInvertible {
                iteration: j,
                node: i,
                lambda_min: lm.as_f64(),
            })?;
            mids.push(gain);
        }
        let theta = FeedbackPath::new(*grid, nodes, mids)?;
        let next = solve_lyapunov(model, coeffs, &theta, grid)?;

        let update = p.sup_distance(&next);
        let pmin = p.min_eigenvalue().1;
        let monotone_margin = if j >= 1 {
            let (node, margin) = p
                .nodes()
                .iter()
                .zip(next.nodes())
                .map(|(a, b)| lambda_min(&(a - b)))
                .enumerate()
                .fold(
                    (0, T::max_value().unwrap()),
                    |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
                );
            if margin < -mono_tol {
                return Err(Error::MonotonicityViolation {
                    iteration: j,
                    node,
                    lambda_min: margin.as_f64(),
                });
            }
            Some(margin)
        } else {
            None
        };
        history.push(IterateStats {
            update,
            kmin,
            pmin,
            monotone_margin,
        });
        p = next;
        if update <= opts.tol {
            return assemble(model, coeffs, p, opts.rank_tol, j + 1, history);
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: opts.max_iter,
        last_update: history.last().map_or(f64::NAN, |s| s.update.as_f64()),
    })
}

fn riccati_rhs<T: Real>(cc: &CellCoeffs<'_, T>, p: &DMatrix<T>, rank_tol: T) -> DMatrix<T> {
    let (k, l) = k_and_l(cc, p);
    let pinv = pseudo_inverse(&k, rank_tol);
    let pa = p * cc.a1;
    let mut out = &pa + pa.transpose();
    out += cc.c.transpose() * p * cc.c;
    out += cc.q;
    out -= l.transpose() * pinv.matrix * &l;
    out
}

/// Direct RK4 integration of the Riccati ODE with `K^†` at every stage.
pub fn riccati_direct<T: Real>(
    model: &SpectralModel<T>,
    coeffs: &CoefficientSet<T>,
    grid: &TimeGrid<T>,
    rank_tol: T,
) -> Result<RiccatiSolution<T>> {
    check_inputs(model, coeffs, grid)?;
    let m = grid.steps();
    let n = model.dim();
    let h = grid.step();
    let frame = ExpFrame::new(model.lambda(), h);
    let mut nodes = vec![DMatrix::zeros(n, n); m + 1];
    let mut mids = vec![DMatrix::zeros(n, n); m];
    nodes[m] = coeffs.g.clone();
    for i in (0..m).rev() {
        let cc = coeffs.cell(grid, i);
        let p1 = &nodes[i + 1];
        let k1 = riccati_rhs(&cc, p1, rank_tol);
        let p0 = lawson_step(&frame, p1, h, k1.clone(), |_, p| {
            Ok(riccati_rhs(&cc, &symmetrize(p), rank_tol))
        })?;
        let p0 = symmetrize(&p0);
        ensure_finite(&p0, "Riccati integration", i)?;
        let n0 = riccati_rhs(&cc, &p0, rank_tol);
        mids[i] = symmetrize(&frame_midpoint(&frame, p1, &p0, &k1, &n0, h));
        nodes[i] = p0;
    }
    let p = MatrixPath::with_mids(*grid, nodes, mids);
    assemble(model, coeffs, p, rank_tol, 0, Vec::new())
}

struct NodeAlgebra<T: Real> {
    k: DMatrix<T>,
    l: DMatrix<T>,
    pinv: PseudoInverse<T>,
}

fn node_algebra<T: Real>(cc: &CellCoeffs<'_, T>, p: &DMatrix<T>, rank_tol: T) -> NodeAlgebra<T> {
    let (k, l) = k_and_l(cc, p);
    let pinv = pseudo_inverse(&k, rank_tol);
    NodeAlgebra { k, l, pinv }
}

/// Regularity certificate of a symmetric path `P`.
pub fn certify<T: Real>(p: &MatrixPath<T>, coeffs: &CoefficientSet<T>, rank_tol: T) -> RegularityCertificate<T> {
    let grid = p.grid();
    let k_dim = coeffs.control_dim();
    let mut kmin = T::max_value().unwrap();
    let mut kmax = T::zero();
    let mut range_defect = T::zero();
    let mut gain_sup = T::zero();
    let mut nullity = 0;
    for i in 0..=grid.steps() {
        let alg = node_algebra(&coeffs.cell(grid, i), p.node(i), rank_tol);
        kmin = kmin.min(lambda_min(&alg.k));
        kmax = kmax.max(alg.k.amax());
        let proj = DMatrix::identity(k_dim, k_dim) - &alg.k * &alg.pinv.matrix;
        range_defect = range_defect.max((proj * &alg.l).norm());
        gain_sup = gain_sup.max((&alg.pinv.matrix * &alg.l).norm());
        nullity = nullity.max(alg.pinv.nullity());
    }
    let pmin = p.min_eigenvalue().1;
    let slack = T::tolerance(REGULARITY_TOL);
    let kind = if kmin > rank_tol * T::one().max(kmax) {
        CertificateKind::StronglyRegular { lambda: kmin }
    } else if kmin < -slack {
        CertificateKind::NotCertified {
            reason: format!("K not positive semidefinite (min eigenvalue {:e})", kmin.as_f64()),
        }
    } else if range_defect > slack {
        CertificateKind::NotCertified {
            reason: format!("range condition violated (defect {:e})", range_defect.as_f64()),
        }
    } else {
        CertificateKind::Regular
    };
    RegularityCertificate {
        kind,
        range_defect,
        kmin,
        pmin,
        gain_sup,
        nullity,
    }
}

/// Minimal-norm feedback `Θ = -K^† L` at nodes and cell midpoints.
pub fn feedback_from<T: Real>(
    sol: &RiccatiSolution<T>,
    coeffs: &CoefficientSet<T>,
    rank_tol: T,
) -> Result<FeedbackPath<T>> {
    if let CertificateKind::NotCertified { reason } = &sol.certificate.kind {
        return Err(Error::NotCertified(reason.clone()));
    }
    feedback_path(&sol.p, coeffs, rank_tol)
}

fn feedback_path<T: Real>(p: &MatrixPath<T>, coeffs: &CoefficientSet<T>, rank_tol: T) -> Result<FeedbackPath<T>> {
    let grid = p.grid();
    let gain = |cc: CellCoeffs<'_, T>, pm: &DMatrix<T>| {
        let alg = node_algebra(&cc, pm, rank_tol);
        -(alg.pinv.matrix * alg.l)
    };
    let nodes = (0..=grid.steps())
        .map(|i| gain(coeffs.cell(grid, i), p.node(i)))
        .collect();
    let mids = (0..grid.steps())
        .map(|i| gain(coeffs.cell(grid, i), &p.mid(i)))
        .collect();
    FeedbackPath::new(*grid, nodes, mids)
}

/// Riccati residual at interior nodes, `dP/ds` by centered differences taken
/// in the exponential frame of `A` (exact for the diagonal part).
fn residual<T: Real>(model: &SpectralModel<T>, coeffs: &CoefficientSet<T>, p: &MatrixPath<T>, rank_tol: T) -> (T, T) {
    let grid = p.grid();
    let m = grid.steps();
    let h = grid.step();
    let lam = model.lambda();
    let framed = |offset: i64, node: usize| {
        let e = lam.map(|l| (l * h * T::lit(offset as f64)).exp());
        let mut y = p.node(node).clone();
        crate::linalg::scale_rows_cols(&mut y, &e, &e);
        y
    };
    let mut worst = T::zero();
    let mut estimate = T::zero();
    for i in 1..m {
        if !(coeffs.smooth_at(grid, i - 1) && coeffs.smooth_at(grid, i) && coeffs.smooth_at(grid, i + 1)) {
            continue;
        }
        let cc = coeffs.cell(grid, i);
        let dy = (framed(1, i + 1) - framed(-1, i - 1)) / (h * T::lit(2.0));
        let r = dy + riccati_rhs(&cc, p.node(i), rank_tol);
        worst = worst.max(r.norm());
        if i >= 2 && i + 2 <= m && coeffs.smooth_at(grid, i - 2) && coeffs.smooth_at(grid, i + 2) {
            let third =
                framed(2, i + 2) - framed(1, i + 1) * T::lit(2.0) + framed(-1, i - 1) * T::lit(2.0) - framed(-2, i - 2);
            estimate = estimate.max(third.norm() / (h * T::lit(12.0)));
        }
    }
    (worst, estimate)
}

fn assemble<T: Real>(
    model: &SpectralModel<T>,
    coeffs: &CoefficientSet<T>,
    p: MatrixPath<T>,
    rank_tol: T,
    iterations: usize,
    history: Vec<IterateStats<T>>,
) -> Result<RiccatiSolution<T>> {
    let grid = *p.grid();
    let mut ks = Vec::with_capacity(grid.steps() + 1);
    let mut ls = Vec::with_capacity(grid.steps() + 1);
    for i in 0..=grid.steps() {
        let (k, l) = k_and_l(&coeffs.cell(&grid, i), p.node(i));
        ks.push(k);
        ls.push(l);
    }
    let certificate = certify(&p, coeffs, rank_tol);
    let theta = feedback_path(&p, coeffs, rank_tol)?;
    let (residual, truncation_estimate) = residual(model, coeffs, &p, rank_tol);
    Ok(RiccatiSolution {
        p,
        k: ks,
        l: ls,
        theta,
        certificate,
        iterations,
        residual,
        truncation_estimate,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    /// (B, C, D, Q, R, G) scalar coefficients with A = A1 = 0.
    fn scalar(b: f64, c: f64, d: f64, q: f64, r: f64, g: f64) -> CoefficientSet<f64> {
        CoefficientSet::constant(e(0.0), e(b), e(c), e(d), e(q), e(r), e(g)).unwrap()
    }

    fn setup(m: usize) -> (SpectralModel<f64>, TimeGrid<f64>) {
        (
            SpectralModel::new(DVector::zeros(1), 1.0).unwrap(),
            TimeGrid::new(0.0, 1.0, m).unwrap(),
        )
    }

    #[test]
    fn scalar_lqr_closed_form() {
        let (model, grid) = setup(200);
        let coeffs = scalar(1.0, 0.0, 0.0, 0.0, 1.0, 1.0);
        let sol = riccati_iterate(&model, &coeffs, &grid, &RiccatiOptions::default()).unwrap();
        for i in [0, 50, 200] {
            let s = grid.node(i);
            assert!((sol.p.node(i)[(0, 0)] - 1.0 / (2.0 - s)).abs() < 1e-9);
            assert!((sol.theta.node(i)[(0, 0)] + 1.0 / (2.0 - s)).abs() < 1e-9);
        }
        assert_eq!(sol.certificate.kind, CertificateKind::StronglyRegular { lambda: 1.0 });
        assert!(sol.residual_ok(1e-9), "{} {}", sol.residual, sol.truncation_estimate);
    }

    #[test]
    fn no_control_coupling_converges_in_one_sweep() {
        let (model, grid) = setup(40);
        let coeffs = scalar(0.0, 0.5, 0.0, 1.0, 1.0, 2.0);
        let sol = riccati_iterate(&model, &coeffs, &grid, &RiccatiOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.theta.nodes().iter().all(|t| t[(0, 0)] == 0.0));
    }

    #[test]
    fn indefinite_weight_fails_at_base_sweep() {
        let (model, grid) = setup(20);
        let coeffs = scalar(0.0, 0.0, 1.0, 0.0, -1.0, 0.5);
        match riccati_iterate(&model, &coeffs, &grid, &RiccatiOptions::default()) {
            Err(Error::KNotInvertible {
                iteration, lambda_min, ..
            }) => {
                assert_eq!(iteration, 0);
                assert!((lambda_min + 0.5).abs() < 1e-12);
            }
            other => panic!("expected KNotInvertible, got {other:?}"),
        }
    }

    #[test]
    fn direct_zero_weights_give_zero_path() {
        let (model, grid) = setup(10);
        let coeffs = scalar(1.0, 0.3, 0.2, 0.0, 1.0, 0.0);
        let sol = riccati_direct(&model, &coeffs, &grid, 1e-10).unwrap();
        assert!(sol.p.nodes().iter().all(|p| p[(0, 0)] == 0.0));
    }

    #[test]
    fn degenerate_grid_rejected() {
        let (model, _) = setup(3);
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let coeffs = scalar(1.0, 0.0, 0.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            riccati_direct(&model, &coeffs, &grid, 1e-10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn certificate_regular_and_violated() {
        let (_, grid) = setup(8);
        let zero = MatrixPath::constant(grid, e(0.0));
        let c = scalar(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let cert = certify(&zero, &c, 1e-10);
        assert_eq!(cert.kind, CertificateKind::Regular);
        assert_eq!(cert.range_defect, 0.0);
        assert_eq!(cert.kmin, 0.0);
        assert_eq!(cert.nullity, 1);

        let ident = MatrixPath::constant(grid, e(1.0));
        let cert = certify(&ident, &c, 1e-10);
        match cert.kind {
            CertificateKind::NotCertified { reason } => assert!(reason.contains("range condition violated")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn feedback_rejects_uncertified() {
        let (model, grid) = setup(8);
        let c = scalar(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut sol = riccati_direct(&model, &c, &grid, 1e-10).unwrap();
        sol.p = MatrixPath::constant(grid, e(1.0));
        sol.certificate = certify(&sol.p, &c, 1e-10);
        assert!(matches!(feedback_from(&sol, &c, 1e-10), Err(Error::NotCertified(_))));
    }

    #[test]
    fn no_control_authority_gives_zero_feedback() {
        let (model, grid) = setup(16);
        let c = scalar(0.0, 0.4, 0.0, 1.0, 1.0, 1.0);
        let sol = riccati_direct(&model, &c, &grid, 1e-10).unwrap();
        let th = feedback_from(&sol, &c, 1e-10).unwrap();
        assert!(th.nodes().iter().all(|t| t.amax() == 0.0));
    }
}
