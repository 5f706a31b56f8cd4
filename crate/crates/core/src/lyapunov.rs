//! Backward Lyapunov-type equations
//!
//! ```text
//! dP/ds + P(A + Ã) + (A + Ã)^T P + C̃^T P C̃ + Q̃ = 0,   P(T) = G̃
//! ```
//!
//! with `Ã = A1 + BΘ`, `C̃ = C + DΘ`, `Q̃ = Θ^T R Θ + Q` for a feedback `Θ`.
//! In the truncated model the mild and classical solutions coincide; the
//! diagonal `A` is propagated exactly and the coupling terms by RK4.

use crate::error::{Error, Result};
use crate::integrate::{ensure_finite, frame_midpoint, lawson_step, ExpFrame, Stage};
use crate::linalg::lambda_min;
use crate::scalar::Real;
use crate::spectral::{symmetrize, CoefficientSet, SpectralModel, TimeGrid};
use nalgebra::DMatrix;

/// Symmetric-matrix path sampled at grid nodes and (optionally) cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath<T: Real> {
    grid: TimeGrid<T>,
    nodes: Vec<DMatrix<T>>,
    mids: Option<Vec<DMatrix<T>>>,
}

impl<T: Real> MatrixPath<T> {
    pub fn new(grid: TimeGrid<T>, nodes: Vec<DMatrix<T>>) -> Result<Self> {
        if nodes.len() != grid.steps() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "path has {} nodes, grid has {}",
                nodes.len(),
                grid.steps() + 1
            )));
        }
        Ok(Self {
            grid,
            nodes,
            mids: None,
        })
    }

    pub fn constant(grid: TimeGrid<T>, value: DMatrix<T>) -> Self {
        Self {
            grid,
            nodes: vec![value; grid.steps() + 1],
            mids: None,
        }
    }

    pub(crate) fn with_mids(grid: TimeGrid<T>, nodes: Vec<DMatrix<T>>, mids: Vec<DMatrix<T>>) -> Self {
        debug_assert_eq!(mids.len(), grid.steps());
        Self {
            grid,
            nodes,
            mids: Some(mids),
        }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].nrows()
    }

    pub fn node(&self, i: usize) -> &DMatrix<T> {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[DMatrix<T>] {
        &self.nodes
    }

    /// Value at the midpoint of cell `i`; the average of the end nodes when no
    /// midpoint samples were recorded.
    pub fn mid(&self, i: usize) -> DMatrix<T> {
        match &self.mids {
            Some(m) => m[i].clone(),
            None => (&self.nodes[i] + &self.nodes[i + 1]) * T::lit(0.5),
        }
    }

    pub fn has_mids(&self) -> bool {
        self.mids.is_some()
    }

    pub fn first(&self) -> &DMatrix<T> {
        &self.nodes[0]
    }

    /// `max_i ||self(s_i) - other(s_i)||_F`.
    pub fn sup_distance(&self, other: &Self) -> T {
        self.nodes
            .iter()
            .zip(&other.nodes)
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), |acc, x| acc.max(x))
    }

    /// Maximum asymmetry over nodes.
    pub fn max_asymmetry(&self) -> T {
        self.nodes
            .iter()
            .map(|m| (m - m.transpose()).amax())
            .fold(T::zero(), |acc, x| acc.max(x))
    }

    /// Minimum over nodes of the smallest eigenvalue, with the node index.
    pub fn min_eigenvalue(&self) -> (usize, T) {
        self.nodes
            .iter()
            .map(lambda_min)
            .enumerate()
            .fold(
                (0, T::max_value().unwrap()),
                |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
            )
    }

    /// Writes `time, m_0_0, m_0_1, ...` rows with 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        crate::io::write_matrix_rows(w, "p", &self.grid.nodes(), &self.nodes)
    }
}

/// Feedback gain path `Θ(s)` (k × n) sampled at nodes and cell midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPath<T: Real> {
    grid: TimeGrid<T>,
    nodes: Vec<DMatrix<T>>,
    mids: Vec<DMatrix<T>>,
}

impl<T: Real> FeedbackPath<T> {
    pub fn new(grid: TimeGrid<T>, nodes: Vec<DMatrix<T>>, mids: Vec<DMatrix<T>>) -> Result<Self> {
        if nodes.len() != grid.steps() + 1 || mids.len() != grid.steps() {
            return Err(Error::DimensionMismatch(
                "feedback path length does not match grid".into(),
            ));
        }
        if nodes.iter().chain(&mids).any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite {
                stage: "feedback construction",
                node: 0,
            });
        }
        Ok(Self { grid, nodes, mids })
    }

    pub fn constant(grid: TimeGrid<T>, gain: DMatrix<T>) -> Self {
        Self {
            grid,
            nodes: vec![gain.clone(); grid.steps() + 1],
            mids: vec![gain; grid.steps()],
        }
    }

    pub fn zeros(grid: TimeGrid<T>, k: usize, n: usize) -> Self {
        Self::constant(grid, DMatrix::zeros(k, n))
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn node(&self, i: usize) -> &DMatrix<T> {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[DMatrix<T>] {
        &self.nodes
    }

    pub fn mid(&self, i: usize) -> &DMatrix<T> {
        &self.mids[i]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.nodes[0].shape()
    }

    /// Gain seen by the backward RK stage of cell `i` (start = right node).
    pub(crate) fn backward_stage(&self, i: usize, stage: Stage) -> &DMatrix<T> {
        match stage {
            Stage::Start => &self.nodes[i + 1],
            Stage::Mid => &self.mids[i],
            Stage::End => &self.nodes[i],
        }
    }

    /// Pointwise sum `self + other`.
    pub fn plus(&self, other: &Self) -> Self {
        let add = |a: &[DMatrix<T>], b: &[DMatrix<T>]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Self {
            grid: self.grid,
            nodes: add(&self.nodes, &other.nodes),
            mids: add(&self.mids, &other.mids),
        }
    }

    /// Samples every `factor`-th node, giving a path on the coarsened grid.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let m = self.grid.steps();
        if factor == 0 || !m.is_multiple_of(factor) {
            return Err(Error::Config(format!("cannot coarsen {m} steps by {factor}")));
        }
        let grid = self.grid.with_steps(m / factor)?;
        let nodes = self.nodes.iter().step_by(factor).cloned().collect();
        // odd factors share the fine midpoint, even ones land on a fine node
        let mids = (0..m / factor)
            .map(|j| {
                let c = j * factor;
                if factor.is_multiple_of(2) {
                    self.nodes[c + factor / 2].clone()
                } else {
                    self.mids[c + factor / 2].clone()
                }
            })
            .collect();
        Ok(Self { grid, nodes, mids })
    }
}

/// Effective coefficients `(Ã, C̃, Q̃)` of one RK stage.
#[derive(Debug, Clone)]
pub struct LyapunovTerms<T: Real> {
    pub drift: DMatrix<T>,
    pub diffusion: DMatrix<T>,
    pub source: DMatrix<T>,
}

impl<T: Real> LyapunovTerms<T> {
    /// `N(P) = PÃ + Ã^T P + C̃^T P C̃ + Q̃`
    fn apply(&self, p: &DMatrix<T>) -> DMatrix<T> {
        let pa = p * &self.drift;
        let cpc = self.diffusion.transpose() * p * &self.diffusion;
        let mut out = &pa + pa.transpose();
        out += cpc;
        out += &self.source;
        out
    }
}

/// Solves the generic Lyapunov equation with terminal value `terminal` and
/// stage coefficients supplied by `terms(cell, stage)`.
pub fn solve_lyapunov_generic<T, F>(
    model: &SpectralModel<T>,
    grid: &TimeGrid<T>,
    terminal: &DMatrix<T>,
    mut terms: F,
) -> Result<MatrixPath<T>>
where
    T: Real,
    F: FnMut(usize, Stage) -> LyapunovTerms<T>,
{
    let n = model.dim();
    if terminal.shape() != (n, n) {
        return Err(Error::DimensionMismatch("terminal value has wrong shape".into()));
    }
    let m = grid.steps();
    let h = grid.step();
    let frame = ExpFrame::new(model.lambda(), h);
    let mut nodes = vec![DMatrix::zeros(n, n); m + 1];
    let mut mids = vec![DMatrix::zeros(n, n); m];
    nodes[m] = symmetrize(terminal);

    for i in (0..m).rev() {
        let start = terms(i, Stage::Start);
        let mid = terms(i, Stage::Mid);
        let end = terms(i, Stage::End);
        let p1 = &nodes[i + 1];
        let k1 = start.apply(p1);
        let p0 = lawson_step(&frame, p1, h, k1.clone(), |stage, p| {
            Ok(match stage {
                Stage::Start => start.apply(p),
                Stage::Mid => mid.apply(p),
                Stage::End => end.apply(p),
            })
        })?;
        let p0 = symmetrize(&p0);
        ensure_finite(&p0, "Lyapunov integration", i)?;
        let n0 = end.apply(&p0);
        mids[i] = symmetrize(&frame_midpoint(&frame, p1, &p0, &k1, &n0, h));
        nodes[i] = p0;
    }
    Ok(MatrixPath::with_mids(*grid, nodes, mids))
}

pub(crate) fn feedback_terms<T: Real>(
    coeffs: &CoefficientSet<T>,
    grid: &TimeGrid<T>,
    theta: &FeedbackPath<T>,
    cell: usize,
    stage: Stage,
) -> LyapunovTerms<T> {
    let cc = coeffs.cell(grid, cell);
    let th = theta.backward_stage(cell, stage);
    let rth = cc.r * th;
    LyapunovTerms {
        drift: cc.a1 + cc.b * th,
        diffusion: cc.c + cc.d * th,
        source: th.transpose() * rth + cc.q,
    }
}

/// Solves the Lyapunov equation associated with feedback `theta`, `P(T) = G`.
pub fn solve_lyapunov<T: Real>(
    model: &SpectralModel<T>,
    coeffs: &CoefficientSet<T>,
    theta: &FeedbackPath<T>,
    grid: &TimeGrid<T>,
) -> Result<MatrixPath<T>> {
    let (k, n) = theta.shape();
    if n != model.dim() || k != coeffs.control_dim() || coeffs.state_dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "feedback is {k}x{n}, expected {}x{}",
            coeffs.control_dim(),
            model.dim()
        )));
    }
    if theta.grid().steps() != grid.steps() {
        return Err(Error::DimensionMismatch("feedback grid differs from solve grid".into()));
    }
    solve_lyapunov_generic(model, grid, &coeffs.g, |cell, stage| {
        feedback_terms(coeffs, grid, theta, cell, stage)
    })
}

/// Outcome of [`lyapunov_psd_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdCheck<T: Real> {
    pub passed: bool,
    /// Node where the smallest eigenvalue is attained.
    pub node: usize,
    pub lambda_min: T,
}

/// Positive semidefiniteness of `P(s)` at every node, to `-1e-8`.
pub fn lyapunov_psd_check<T: Real>(p: &MatrixPath<T>) -> PsdCheck<T> {
    let (node, lambda_min) = p.min_eigenvalue();
    PsdCheck {
        passed: lambda_min >= -T::tolerance(1e-8),
        node,
        lambda_min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn scalar(c: f64, q: f64, g: f64) -> CoefficientSet<f64> {
        let z = DMatrix::zeros(1, 1);
        let e = |x: f64| DMatrix::from_element(1, 1, x);
        CoefficientSet::constant(z.clone(), z.clone(), e(c), z, e(q), e(1.0), e(g)).unwrap()
    }

    #[test]
    fn decoupled_exponentials() {
        let lambda = DVector::from_vec(vec![-1.0f64, 0.5, -3.0]);
        let model = SpectralModel::new(lambda.clone(), 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let mut coeffs = CoefficientSet::identity_weights(3, 2);
        coeffs.r = crate::spectral::Schedule::zeros(2, 2);
        let th = FeedbackPath::zeros(grid, 2, 3);
        let p = solve_lyapunov(&model, &coeffs, &th, &grid).unwrap();
        for i in [0, 17, 50] {
            let s = grid.node(i);
            for j in 0..3 {
                let want = (2.0 * lambda[j] * (1.0 - s)).exp();
                assert!((p.node(i)[(j, j)] - want).abs() < 1e-13 * want.max(1.0));
            }
            assert!(p.node(i)[(0, 1)].abs() < 1e-15);
        }
    }

    #[test]
    fn constant_solution_without_dynamics() {
        let model = SpectralModel::new(DVector::zeros(2), 2.0).unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 8).unwrap();
        let g0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let z2 = DMatrix::zeros(2, 2);
        let z1 = DMatrix::zeros(2, 1);
        let coeffs = CoefficientSet::constant(
            z2.clone(),
            z1.clone(),
            z2.clone(),
            z1,
            z2,
            DMatrix::zeros(1, 1),
            g0.clone(),
        )
        .unwrap();
        let p = solve_lyapunov(&model, &coeffs, &FeedbackPath::zeros(grid, 1, 2), &grid).unwrap();
        for node in p.nodes() {
            assert_eq!(node, &g0);
        }
    }

    #[test]
    fn scalar_closed_form() {
        // dp/ds = -(p + 1), p(T) = 0  =>  p(s) = e^{T-s} - 1
        let model = SpectralModel::new(DVector::zeros(1), 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let p = solve_lyapunov(&model, &scalar(1.0, 1.0, 0.0), &FeedbackPath::zeros(grid, 1, 1), &grid).unwrap();
        assert!((p.first()[(0, 0)] - (1f64.exp() - 1.0)).abs() < 1e-9);
        for i in 0..100 {
            let s = grid.midpoint(i);
            assert!((p.mid(i)[(0, 0)] - ((1.0 - s).exp() - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn psd_check_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let zero = MatrixPath::constant(grid, DMatrix::<f64>::zeros(2, 2));
        assert!(lyapunov_psd_check(&zero).passed);

        let mut nodes = vec![DMatrix::identity(2, 2); 5];
        nodes[0] = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0]));
        let bad = MatrixPath::new(grid, nodes).unwrap();
        let chk = lyapunov_psd_check(&bad);
        assert!(!chk.passed);
        assert_eq!(chk.node, 0);
        assert_eq!(chk.lambda_min, -1.0);
    }

    #[test]
    fn overflow_is_reported_with_node() {
        let model = SpectralModel::new(DVector::from_vec(vec![400.0]), 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let err = solve_lyapunov(&model, &scalar(0.0, 0.0, 1.0), &FeedbackPath::zeros(grid, 1, 1), &grid);
        assert!(matches!(err, Err(Error::NonFinite { .. })), "{err:?}");
    }

    #[test]
    fn coarsened_feedback_samples_fine_nodes() {
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let nodes: Vec<_> = (0..=8).map(|i| DMatrix::from_element(1, 1, i as f64)).collect();
        let mids: Vec<_> = (0..8).map(|i| DMatrix::from_element(1, 1, i as f64 + 0.5)).collect();
        let th = FeedbackPath::new(grid, nodes, mids).unwrap();
        let c = th.coarsen(2).unwrap();
        assert_eq!(c.grid().steps(), 4);
        assert_eq!(c.node(2)[(0, 0)], 4.0);
        assert_eq!(c.mid(1)[(0, 0)], 3.0);
        assert!(th.coarsen(3).is_err());
    }
}
