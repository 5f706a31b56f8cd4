//! Spectrally truncated model: the diagonal generator, the time grid and the
//! piecewise-constant coefficient paths expressed in the truncated eigenbasis.

use crate::error::{Error, Result};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};

/// Symmetry tolerance applied to `Q`, `R` and `G` on construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Generator `A` represented by its eigenvalues in a fixed orthonormal basis.
///
/// The exponential `e^{As}` is the diagonal matrix `diag(e^{lambda_j s})` and is
/// defined for either sign of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel<T: Real> {
    lambda: DVector<T>,
    horizon: T,
}

impl<T: Real> SpectralModel<T> {
    pub fn new(lambda: DVector<T>, horizon: T) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::DimensionMismatch("truncation dimension must be >= 1".into()));
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::Parse("eigenvalues must be finite".into()));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::Parse("horizon must be positive".into()));
        }
        Ok(Self { lambda, horizon })
    }

    /// Heat-type spectrum `lambda_j = -j^2`, `j = 1..=n`.
    pub fn heat(n: usize, horizon: T) -> Result<Self> {
        let lambda = DVector::from_fn(n, |j, _| -T::lit(((j + 1) * (j + 1)) as f64));
        Self::new(lambda, horizon)
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &DVector<T> {
        &self.lambda
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// Diagonal of `e^{As}`.
    pub fn exp_diag(&self, s: T) -> DVector<T> {
        self.lambda.map(|l| (l * s).exp())
    }

    /// `e^{As} v`.
    pub fn semigroup_apply(&self, s: T, v: &DVector<T>) -> DVector<T> {
        assert_eq!(v.len(), self.dim(), "vector length must match truncation dimension");
        v.component_mul(&self.exp_diag(s))
    }

    /// Coordinate projection onto the first `n_sub` eigenmodes.
    pub fn project(&self, n_sub: usize, v: &DVector<T>) -> Result<DVector<T>> {
        if n_sub == 0 || n_sub > self.dim() {
            return Err(Error::Index {
                index: n_sub,
                max: self.dim(),
            });
        }
        let mut out = v.clone();
        out.rows_mut(n_sub, self.dim() - n_sub).fill(T::zero());
        Ok(out)
    }

    /// Model restricted to its first `n_sub` modes.
    pub fn truncate(&self, n_sub: usize) -> Result<Self> {
        if n_sub == 0 || n_sub > self.dim() {
            return Err(Error::Index {
                index: n_sub,
                max: self.dim(),
            });
        }
        Self::new(self.lambda.rows(0, n_sub).into_owned(), self.horizon)
    }
}

/// Uniform grid `t0 = s_0 < s_1 < ... < s_m = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T: Real> {
    t0: T,
    t_end: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t0: T, t_end: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        if !(t0 < t_end) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::Config("grid requires t0 < T".into()));
        }
        Ok(Self { t0, t_end, steps })
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> T {
        (self.t_end - self.t0) / T::lit(self.steps as f64)
    }

    pub fn node(&self, i: usize) -> T {
        if i == self.steps {
            self.t_end
        } else {
            self.t0 + self.step() * T::lit(i as f64)
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Midpoint of cell `[s_i, s_{i+1})`.
    pub fn midpoint(&self, i: usize) -> T {
        self.t0 + self.step() * (T::lit(i as f64) + T::lit(0.5))
    }

    /// Same interval with `steps * factor` cells.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            steps: self.steps * factor,
            ..*self
        }
    }

    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self::new(self.t0, self.t_end, steps)
    }
}

/// Piecewise-constant matrix path: `values[i]` holds on `[breaks[i], breaks[i+1])`.
/// Times before the first breakpoint use the first value.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T: Real> {
    breaks: Vec<T>,
    values: Vec<DMatrix<T>>,
}

impl<T: Real> Schedule<T> {
    pub fn constant(value: DMatrix<T>) -> Self {
        Self {
            breaks: vec![-T::max_value().unwrap()],
            values: vec![value],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn piecewise(pieces: Vec<(T, DMatrix<T>)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Parse("piecewise path needs at least one breakpoint".into()));
        }
        let shape = pieces[0].1.shape();
        let mut breaks = Vec::with_capacity(pieces.len());
        let mut values = Vec::with_capacity(pieces.len());
        for (t, m) in pieces {
            if m.shape() != shape {
                return Err(Error::DimensionMismatch(format!(
                    "breakpoint matrices have shapes {:?} and {:?}",
                    shape,
                    m.shape()
                )));
            }
            if let Some(&last) = breaks.last() {
                if !(t > last) {
                    return Err(Error::Parse("breakpoint times must be strictly increasing".into()));
                }
            }
            breaks.push(t);
            values.push(m);
        }
        Ok(Self { breaks, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    fn segment(&self, t: T) -> usize {
        self.breaks.partition_point(|&b| b <= t).saturating_sub(1)
    }

    pub fn at(&self, t: T) -> &DMatrix<T> {
        &self.values[self.segment(t)]
    }

    pub fn values(&self) -> impl Iterator<Item = &DMatrix<T>> {
        self.values.iter()
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = (T, &DMatrix<T>)> {
        self.breaks.iter().copied().zip(self.values.iter())
    }

    fn map(&self, f: impl Fn(&DMatrix<T>) -> DMatrix<T>) -> Self {
        Self {
            breaks: self.breaks.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    fn try_for_each(&self, mut f: impl FnMut(T, &DMatrix<T>) -> Result<()>) -> Result<()> {
        for (t, m) in self.breakpoints() {
            f(t, m)?;
        }
        Ok(())
    }
}

/// Coefficients of one grid cell, borrowed from a [`CoefficientSet`].
#[derive(Debug, Clone, Copy)]
pub struct CellCoeffs<'a, T: Real> {
    pub a1: &'a DMatrix<T>,
    pub b: &'a DMatrix<T>,
    pub c: &'a DMatrix<T>,
    pub d: &'a DMatrix<T>,
    pub q: &'a DMatrix<T>,
    pub r: &'a DMatrix<T>,
}

/// Time-dependent coefficients `A1, B, C, D, Q, R` and terminal weight `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet<T: Real> {
    n: usize,
    k: usize,
    pub a1: Schedule<T>,
    pub b: Schedule<T>,
    pub c: Schedule<T>,
    pub d: Schedule<T>,
    pub q: Schedule<T>,
    pub r: Schedule<T>,
    pub g: DMatrix<T>,
}

fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

fn check_symmetric<T: Real>(field: &str, time: T, m: &DMatrix<T>) -> Result<()> {
    let scale = T::one().max(m.amax());
    let defect = asymmetry(m);
    if defect > T::tolerance(SYMMETRY_TOL) * scale {
        return Err(Error::Asymmetry {
            field: field.to_string(),
            time: time.as_f64(),
            defect: defect.as_f64(),
        });
    }
    Ok(())
}

impl<T: Real> CoefficientSet<T> {
    /// Validates shapes, finiteness and symmetry, then symmetrizes `Q`, `R`, `G`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        k: usize,
        a1: Schedule<T>,
        b: Schedule<T>,
        c: Schedule<T>,
        d: Schedule<T>,
        q: Schedule<T>,
        r: Schedule<T>,
        g: DMatrix<T>,
    ) -> Result<Self> {
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::DimensionMismatch(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )))
            } else {
                Ok(())
            }
        };
        expect("A1", a1.shape(), (n, n))?;
        expect("B", b.shape(), (n, k))?;
        expect("C", c.shape(), (n, n))?;
        expect("D", d.shape(), (n, k))?;
        expect("Q", q.shape(), (n, n))?;
        expect("R", r.shape(), (k, k))?;
        expect("G", g.shape(), (n, n))?;

        for (name, s) in [("A1", &a1), ("B", &b), ("C", &c), ("D", &d), ("Q", &q), ("R", &r)] {
            if s.values().any(|m| m.iter().any(|x| !x.is_finite())) {
                return Err(Error::Parse(format!("{name} has non-finite entries")));
            }
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse("G has non-finite entries".into()));
        }
        q.try_for_each(|t, m| check_symmetric("Q", t, m))?;
        r.try_for_each(|t, m| check_symmetric("R", t, m))?;
        check_symmetric("G", T::zero(), &g)?;

        Ok(Self {
            n,
            k,
            a1,
            b,
            c,
            d,
            q: q.map(symmetrize),
            r: r.map(symmetrize),
            g: symmetrize(&g),
        })
    }

    /// All coefficients zero except `R = I` and `G = I`.
    pub fn identity_weights(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            a1: Schedule::zeros(n, n),
            b: Schedule::zeros(n, k),
            c: Schedule::zeros(n, n),
            d: Schedule::zeros(n, k),
            q: Schedule::zeros(n, n),
            r: Schedule::constant(DMatrix::identity(k, k)),
            g: DMatrix::identity(n, n),
        }
    }

    /// Constant-in-time coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        a1: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        d: DMatrix<T>,
        q: DMatrix<T>,
        r: DMatrix<T>,
        g: DMatrix<T>,
    ) -> Result<Self> {
        let (n, k) = b.shape();
        Self::new(
            n,
            k,
            Schedule::constant(a1),
            Schedule::constant(b),
            Schedule::constant(c),
            Schedule::constant(d),
            Schedule::constant(q),
            Schedule::constant(r),
            g,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.k
    }

    /// Coefficients in force at time `t`.
    pub fn at(&self, t: T) -> CellCoeffs<'_, T> {
        CellCoeffs {
            a1: self.a1.at(t),
            b: self.b.at(t),
            c: self.c.at(t),
            d: self.d.at(t),
            q: self.q.at(t),
            r: self.r.at(t),
        }
    }

    /// Coefficients of cell `[s_i, s_{i+1})`; node `m` reuses the last cell.
    pub fn cell(&self, grid: &TimeGrid<T>, i: usize) -> CellCoeffs<'_, T> {
        self.at(grid.midpoint(i.min(grid.steps() - 1)))
    }

    /// True when the cells on both sides of node `i` carry identical coefficients.
    pub fn smooth_at(&self, grid: &TimeGrid<T>, i: usize) -> bool {
        if i == 0 || i >= grid.steps() {
            return true;
        }
        let (l, r) = (grid.midpoint(i - 1), grid.midpoint(i));
        [&self.a1, &self.b, &self.c, &self.d, &self.q, &self.r]
            .iter()
            .all(|s| s.segment(l) == s.segment(r))
    }

    /// Galerkin restriction to the first `n_sub` modes: state blocks become
    /// `Gamma_n M Gamma_n`, input blocks keep their first `n_sub` rows.
    pub fn truncate(&self, n_sub: usize) -> Result<Self> {
        if n_sub == 0 || n_sub > self.n {
            return Err(Error::Index {
                index: n_sub,
                max: self.n,
            });
        }
        let sq = |m: &DMatrix<T>| m.view((0, 0), (n_sub, n_sub)).into_owned();
        let rows = |m: &DMatrix<T>| m.rows(0, n_sub).into_owned();
        Ok(Self {
            n: n_sub,
            k: self.k,
            a1: self.a1.map(sq),
            b: self.b.map(rows),
            c: self.c.map(sq),
            d: self.d.map(rows),
            q: self.q.map(sq),
            r: self.r.clone(),
            g: sq(&self.g),
        })
    }

    /// Sup over breakpoints of the spectral norm of `R`.
    pub fn r_norm_sup(&self) -> T {
        self.r
            .values()
            .map(|m| m.symmetric_eigenvalues().amax())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn semigroup_examples() {
        let m = SpectralModel::new(v(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(m.semigroup_apply(5.0, &v(&[1.0, 2.0])), v(&[1.0, 2.0]));

        let m = SpectralModel::new(v(&[1.0]), 1.0).unwrap();
        assert_relative_eq!(m.semigroup_apply(2f64.ln(), &v(&[3.0]))[0], 6.0, epsilon = 1e-14);

        let m = SpectralModel::new(v(&[-1.0, 2.0]), 1.0).unwrap();
        let out = m.semigroup_apply(-1.0, &v(&[1.0, 1.0]));
        assert_relative_eq!(out[0], 1f64.exp(), epsilon = 1e-14);
        assert_relative_eq!(out[1], (-2f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn projection_examples() {
        let m = SpectralModel::new(v(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        let x = v(&[1.0, 2.0, 3.0]);
        assert_eq!(m.project(2, &x).unwrap(), v(&[1.0, 2.0, 0.0]));
        assert_eq!(m.project(3, &x).unwrap(), x);
        let p = m.project(1, &x).unwrap();
        assert_eq!(m.project(1, &p).unwrap(), p);
        assert!(matches!(m.project(0, &x), Err(Error::Index { .. })));
        assert!(matches!(m.project(4, &x), Err(Error::Index { .. })));
    }

    #[test]
    fn heat_spectrum() {
        let m = SpectralModel::<f64>::heat(8, 1.0).unwrap();
        assert_eq!(m.dim(), 8);
        assert_eq!(m.lambda()[7], -64.0);
    }

    #[test]
    fn grid_nodes_are_uniform_and_hit_endpoints() {
        let g = TimeGrid::new(0.0, 1.0, 7).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 8);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[7], 1.0);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn schedule_lookup_is_right_continuous() {
        let s = Schedule::piecewise(vec![
            (0.0, DMatrix::from_element(1, 1, 1.0)),
            (0.5, DMatrix::from_element(1, 1, 2.0)),
        ])
        .unwrap();
        assert_eq!(s.at(-1.0)[(0, 0)], 1.0);
        assert_eq!(s.at(0.49)[(0, 0)], 1.0);
        assert_eq!(s.at(0.5)[(0, 0)], 2.0);
        assert_eq!(s.at(0.9)[(0, 0)], 2.0);
    }

    #[test]
    fn asymmetric_weight_rejected_and_near_symmetric_symmetrized() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let err = CoefficientSet::constant(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            bad,
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(err, Err(Error::Asymmetry { .. })));

        let almost = DMatrix::from_row_slice(2, 2, &[1.0, 0.5 + 1e-13, 0.5, 1.0]);
        let ok = CoefficientSet::constant(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            almost,
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let q = ok.q.at(0.0);
        assert_eq!(q[(0, 1)], q[(1, 0)]);
    }

    #[test]
    fn truncation_takes_leading_blocks() {
        let a1 = DMatrix::from_fn(3, 3, |i, j| (3 * i + j) as f64);
        let b = DMatrix::from_fn(3, 2, |i, j| (2 * i + j) as f64);
        let set = CoefficientSet::constant(
            a1,
            b,
            DMatrix::zeros(3, 3),
            DMatrix::zeros(3, 2),
            DMatrix::identity(3, 3),
            DMatrix::identity(2, 2),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let t = set.truncate(2).unwrap();
        assert_eq!(t.state_dim(), 2);
        assert_eq!(t.control_dim(), 2);
        assert_eq!(t.a1.at(0.0), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 3.0, 4.0]));
        assert_eq!(t.b.at(0.0), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]));
    }
}
