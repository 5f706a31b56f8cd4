#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use slq_core::{CoefficientSet, Real, Scenario, SpectralModel, TimeGrid};
use std::path::PathBuf;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

/// Scalar coefficients `(λ, a1, b, c, d, q, r, g)` on `[0, horizon]`.
#[derive(Debug, Clone, Copy)]
pub struct Scalar {
    pub lambda: f64,
    pub a1: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub q: f64,
    pub r: f64,
    pub g: f64,
    pub eta: f64,
    pub horizon: f64,
}

impl Default for Scalar {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            a1: 0.0,
            b: 1.0,
            c: 0.0,
            d: 0.0,
            q: 0.0,
            r: 1.0,
            g: 1.0,
            eta: 1.0,
            horizon: 1.0,
        }
    }
}

impl Scalar {
    pub fn build<T: Real>(&self, steps: usize, seed: u64, paths: usize) -> Scenario<T> {
        let m = |x: f64| DMatrix::from_element(1, 1, T::lit(x));
        let model = SpectralModel::new(DVector::from_element(1, T::lit(self.lambda)), T::lit(self.horizon)).unwrap();
        let grid = TimeGrid::new(T::zero(), T::lit(self.horizon), steps).unwrap();
        let coeffs = CoefficientSet::constant(
            m(self.a1),
            m(self.b),
            m(self.c),
            m(self.d),
            m(self.q),
            m(self.r),
            m(self.g),
        )
        .unwrap();
        Scenario::new(
            model,
            grid,
            coeffs,
            DVector::from_element(1, T::lit(self.eta)),
            seed,
            paths,
        )
        .unwrap()
    }
}
