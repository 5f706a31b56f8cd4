//! Small dense linear-algebra helpers on symmetric matrices.

use crate::scalar::Real;
use nalgebra::{DMatrix, SymmetricEigen};

/// Moore-Penrose inverse of a symmetric matrix together with its numerical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverse<T: Real> {
    pub matrix: DMatrix<T>,
    pub rank: usize,
    pub rank_tol: T,
}

impl<T: Real> PseudoInverse<T> {
    pub fn nullity(&self) -> usize {
        self.matrix.nrows() - self.rank
    }
}

/// Eigendecomposition-based pseudo-inverse of symmetric `f`.
///
/// Eigenvalues with `|mu| <= rank_tol * max(1, max |mu|)` are treated as zero.
pub fn pseudo_inverse<T: Real>(f: &DMatrix<T>, rank_tol: T) -> PseudoInverse<T> {
    let k = f.nrows();
    if k == 0 {
        return PseudoInverse {
            matrix: DMatrix::zeros(0, 0),
            rank: 0,
            rank_tol,
        };
    }
    let eig = SymmetricEigen::new(f.clone());
    let cutoff = rank_tol * T::one().max(eig.eigenvalues.amax());
    let mut inv_diag = eig.eigenvalues.clone();
    let mut rank = 0;
    for mu in inv_diag.iter_mut() {
        if mu.abs() > cutoff {
            *mu = T::one() / *mu;
            rank += 1;
        } else {
            *mu = T::zero();
        }
    }
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= inv_diag[j];
    }
    let matrix = crate::spectral::symmetrize(&(scaled * v.transpose()));
    PseudoInverse { matrix, rank, rank_tol }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    m.clone().symmetric_eigenvalues().max()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm2<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    m.clone().symmetric_eigenvalues().amax()
}

/// `M <- diag(e) M diag(f)`, the congruence used by the exact exponential frame.
pub(crate) fn scale_rows_cols<T: Real>(m: &mut DMatrix<T>, rows: &nalgebra::DVector<T>, cols: &nalgebra::DVector<T>) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= rows[i] * cols[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix() {
        let p = pseudo_inverse(&DMatrix::<f64>::zeros(3, 3), 1e-10);
        assert_eq!(p.rank, 0);
        assert_eq!(p.matrix, DMatrix::zeros(3, 3));
    }

    #[test]
    fn diagonal_rank_one() {
        let f = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0f64, 0.0]));
        let p = pseudo_inverse(&f, 1e-10);
        assert_eq!(p.rank, 1);
        assert!((p.matrix[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(p.matrix[(1, 1)].abs() < 1e-15);
        assert!(p.matrix[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn identity() {
        let p = pseudo_inverse(&DMatrix::<f64>::identity(4, 4), 1e-10);
        assert_eq!(p.rank, 4);
        assert!((p.matrix - DMatrix::identity(4, 4)).norm() < 1e-14);
    }

    #[test]
    fn eigen_extremes() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0f64, 1.0, 1.0, 2.0]);
        assert!((lambda_min(&m) - 1.0).abs() < 1e-14);
        assert!((lambda_max(&m) - 3.0).abs() < 1e-14);
        assert!((sym_norm2(&(-m)) - 3.0).abs() < 1e-14);
    }
}
