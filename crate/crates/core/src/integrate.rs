//! Integrating-factor RK4 for ODEs whose stiff part is the diagonal generator.
//!
//! States evolve as `dY/dsigma = L(Y) + N(sigma, Y)` where `L` is the linear
//! action induced by `A = diag(lambda)` (for a matrix `Y` it is `AY + YA`,
//! for a vector `Ay`). `e^{sigma L}` is applied exactly, so only the coupling
//! part `N` is discretized and its error is fourth order in the step.

use crate::error::{Error, Result};
use crate::linalg::scale_rows_cols;
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};

/// Position of an RK stage inside a step of length `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Start,
    Mid,
    End,
}

/// Exact propagators `e^{sigma A}` for `sigma = h/2` and `h`, plus the inverse half step.
#[derive(Debug, Clone)]
pub(crate) struct ExpFrame<T: Real> {
    pub half: DVector<T>,
    pub full: DVector<T>,
    pub half_inv: DVector<T>,
}

impl<T: Real> ExpFrame<T> {
    pub fn new(lambda: &DVector<T>, h: T) -> Self {
        let half = lambda.map(|l| (l * h * T::lit(0.5)).exp());
        let full = lambda.map(|l| (l * h).exp());
        Self {
            half_inv: half.map(|e| T::one() / e),
            half,
            full,
        }
    }
}

/// State that `e^{sigma L}` acts on.
pub(crate) trait FrameState<T: Real>: Clone {
    fn propagate(&self, e: &DVector<T>) -> Self;
    /// `self + a * other`
    fn add_scaled(&self, other: &Self, a: T) -> Self;
    fn scale(&self, a: T) -> Self;
    fn is_finite(&self) -> bool;
}

impl<T: Real> FrameState<T> for DMatrix<T> {
    fn propagate(&self, e: &DVector<T>) -> Self {
        let mut out = self.clone();
        scale_rows_cols(&mut out, e, e);
        out
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

/// One Lawson RK4 step of length `h`. Returns the new state.
pub(crate) fn lawson_step<T, S, F>(frame: &ExpFrame<T>, y0: &S, h: T, k1: S, mut rhs: F) -> Result<S>
where
    T: Real,
    S: FrameState<T>,
    F: FnMut(Stage, &S) -> Result<S>,
{
    let half_h = h * T::lit(0.5);
    let y0_half = y0.propagate(&frame.half);
    let y0_full = y0.propagate(&frame.full);

    let k2 = rhs(Stage::Mid, &y0.add_scaled(&k1, half_h).propagate(&frame.half))?;
    let k3 = rhs(Stage::Mid, &y0_half.add_scaled(&k2, half_h))?;
    let k4 = rhs(Stage::End, &y0_full.add_scaled(&k3.propagate(&frame.half), h))?;

    let sixth = h / T::lit(6.0);
    let combo = k1
        .propagate(&frame.full)
        .add_scaled(&k2.add_scaled(&k3, T::one()).propagate(&frame.half), T::lit(2.0))
        .add_scaled(&k4, T::one());
    Ok(y0_full.add_scaled(&combo, sixth))
}

/// Cubic Hermite midpoint in the exponential frame.
///
/// Given `y0 = Y(0)`, `y1 = Y(h)` and the coupling derivatives `n0 = N(0, y0)`,
/// `n1 = N(h, y1)`, interpolates `W(sigma) = e^{-sigma L} Y(sigma)` (whose
/// derivative is `e^{-sigma L} N`) at `h/2` and maps back.
pub(crate) fn frame_midpoint<T: Real, S: FrameState<T>>(
    frame: &ExpFrame<T>,
    y0: &S,
    y1: &S,
    n0: &S,
    n1: &S,
    h: T,
) -> S {
    let half = T::lit(0.5);
    let eighth_h = h / T::lit(8.0);
    let base = y0
        .propagate(&frame.half)
        .add_scaled(&y1.propagate(&frame.half_inv), T::one());
    let slope = n0
        .propagate(&frame.half)
        .add_scaled(&n1.propagate(&frame.half_inv), -T::one());
    base.scale(half).add_scaled(&slope, eighth_h)
}

pub(crate) fn ensure_finite<T: Real, S: FrameState<T>>(s: &S, stage: &'static str, node: usize) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, node })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // dY/dsigma = 2 lambda Y + c Y  (scalar matrix), exact Y = exp((2 lambda + c) sigma)
    #[test]
    fn linear_scalar_is_exact() {
        let lambda = DVector::from_vec(vec![-30.0]);
        let c = 0.7;
        let err = |steps: usize| {
            let h = 1.0 / steps as f64;
            let frame = ExpFrame::new(&lambda, h);
            let mut y = DMatrix::from_element(1, 1, 1.0);
            for _ in 0..steps {
                let k1 = &y * c;
                y = lawson_step(&frame, &y, h, k1, |_, s| Ok(s * c)).unwrap();
            }
            (y[(0, 0)] - (2.0 * -30.0 + c).exp()).abs()
        };
        // the stiff part is exact, so the error is tiny even on coarse grids
        assert!(err(10) < 1e-12);
    }

    #[test]
    fn nonlinear_order_is_four() {
        // dy/dsigma = y^2, y(0)=0.5 -> y = 1/(2 - sigma); no linear part
        let lambda = DVector::from_vec(vec![0.0]);
        let run = |steps: usize| {
            let h = 1.0 / steps as f64;
            let frame = ExpFrame::new(&lambda, h);
            let mut y = DMatrix::from_element(1, 1, 0.5);
            for _ in 0..steps {
                let k1 = y.component_mul(&y);
                y = lawson_step(&frame, &y, h, k1, |_, s| Ok(s.component_mul(s))).unwrap();
            }
            (y[(0, 0)] - 1.0).abs()
        };
        let order = (run(20) / run(40)).log2();
        assert!(order > 3.8, "observed order {order}");
    }

    #[test]
    fn hermite_midpoint_is_accurate() {
        // Y(sigma) = exp(-sigma): the congruence doubles lambda = -0.5, N = 0
        let lambda = DVector::from_vec(vec![-0.5]);
        let h: f64 = 0.1;
        let frame = ExpFrame::new(&lambda, h);
        let y0 = DMatrix::from_element(1, 1, 1.0);
        let y1 = DMatrix::from_element(1, 1, (-h).exp());
        let z = DMatrix::zeros(1, 1);
        let mid = frame_midpoint(&frame, &y0, &y1, &z, &z, h);
        assert!((mid[(0, 0)] - (-h / 2.0).exp()).abs() < 1e-15);
    }
}
