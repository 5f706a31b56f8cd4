//! Scenario files: TOML (or the equivalent JSON) describing one truncated
//! stochastic LQ problem.
//!
//! ```toml
//! n = 1            # truncation dimension
//! k = 1            # control dimension
//! T = 1.0          # horizon
//! t0 = 0.0         # optional, default 0
//! m = 1000         # grid steps
//! lambda = [0.0]   # eigenvalues of A
//! eta = [1.0]      # initial state
//! seed = 42
//! mc_paths = 100000
//!
//! [coefficients]   # omitted entries are zero
//! B = [[1.0]]
//! R = [[1.0]]
//! G = [[1.0]]
//! # piecewise-constant paths list (start time, matrix) breakpoints:
//! Q = [{ t = 0.0, value = [[0.0]] }, { t = 0.5, value = [[1.0]] }]
//! ```

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{CoefficientSet, Schedule, SpectralModel, TimeGrid};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub t: f64,
    pub value: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixEntry {
    Constant(Vec<Vec<f64>>),
    Piecewise(Vec<Breakpoint>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientFile {
    #[serde(rename = "A1", default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<MatrixEntry>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixEntry>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixEntry>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<MatrixEntry>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<MatrixEntry>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<MatrixEntry>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub t0: f64,
    pub m: usize,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub mc_paths: usize,
    #[serde(default)]
    pub coefficients: CoefficientFile,
}

fn default_paths() -> usize {
    10_000
}

/// A validated problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T: Real> {
    pub model: SpectralModel<T>,
    pub grid: TimeGrid<T>,
    pub coeffs: CoefficientSet<T>,
    pub eta: DVector<T>,
    pub seed: u64,
    pub mc_paths: usize,
}

impl<T: Real> Scenario<T> {
    pub fn new(
        model: SpectralModel<T>,
        grid: TimeGrid<T>,
        coeffs: CoefficientSet<T>,
        eta: DVector<T>,
        seed: u64,
        mc_paths: usize,
    ) -> Result<Self> {
        let n = model.dim();
        if coeffs.state_dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "coefficients have n = {}, model has n = {n}",
                coeffs.state_dim()
            )));
        }
        if eta.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "eta has length {}, expected {n}",
                eta.len()
            )));
        }
        if eta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse("eta has non-finite entries".into()));
        }
        if mc_paths == 0 {
            return Err(Error::Config("mc_paths must be positive".into()));
        }
        if (grid.t_end() - model.horizon()).abs() > T::tolerance(1e-12) * T::one().max(model.horizon().abs()) {
            return Err(Error::DimensionMismatch("grid end differs from model horizon".into()));
        }
        Ok(Self {
            model,
            grid,
            coeffs,
            eta,
            seed,
            mc_paths,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.model.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.coeffs.control_dim()
    }

    /// Same problem on a grid with `steps` cells.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Ok(Self {
            grid: self.grid.with_steps(steps)?,
            ..self.clone()
        })
    }

    pub fn with_eta(&self, eta: DVector<T>) -> Result<Self> {
        Self::new(
            self.model.clone(),
            self.grid,
            self.coeffs.clone(),
            eta,
            self.seed,
            self.mc_paths,
        )
    }

    /// Galerkin truncation to the first `n_sub` modes, initial state projected.
    pub fn truncate(&self, n_sub: usize) -> Result<Self> {
        let model = self.model.truncate(n_sub)?;
        let coeffs = self.coeffs.truncate(n_sub)?;
        let eta = self.eta.rows(0, n_sub).into_owned();
        Self::new(model, self.grid, coeffs, eta, self.seed, self.mc_paths)
    }
}

fn matrix<T: Real>(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<DMatrix<T>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        let got_cols = rows.first().map_or(0, Vec::len);
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{got_cols}, expected {}x{}",
            rows.len(),
            shape.0,
            shape.1
        )));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| T::lit(rows[i][j])))
}

fn schedule<T: Real>(name: &str, entry: Option<&MatrixEntry>, shape: (usize, usize)) -> Result<Schedule<T>> {
    match entry {
        None => Ok(Schedule::zeros(shape.0, shape.1)),
        Some(MatrixEntry::Constant(rows)) => Ok(Schedule::constant(matrix(name, rows, shape)?)),
        Some(MatrixEntry::Piecewise(points)) => {
            let pieces = points
                .iter()
                .map(|bp| Ok((T::lit(bp.t), matrix(name, &bp.value, shape)?)))
                .collect::<Result<Vec<_>>>()?;
            Schedule::piecewise(pieces)
        }
    }
}

impl ScenarioFile {
    pub fn build<T: Real>(&self) -> Result<Scenario<T>> {
        let (n, k) = (self.n, self.k);
        if n == 0 || k == 0 {
            return Err(Error::DimensionMismatch("n and k must be >= 1".into()));
        }
        if self.lambda.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "lambda has {} entries, expected n = {n}",
                self.lambda.len()
            )));
        }
        let model = SpectralModel::new(
            DVector::from_iterator(n, self.lambda.iter().map(|&x| T::lit(x))),
            T::lit(self.horizon),
        )?;
        let grid = TimeGrid::new(T::lit(self.t0), T::lit(self.horizon), self.m)?;
        let c = &self.coefficients;
        let g = match &c.g {
            Some(rows) => matrix("G", rows, (n, n))?,
            None => DMatrix::zeros(n, n),
        };
        let coeffs = CoefficientSet::new(
            n,
            k,
            schedule("A1", c.a1.as_ref(), (n, n))?,
            schedule("B", c.b.as_ref(), (n, k))?,
            schedule("C", c.c.as_ref(), (n, n))?,
            schedule("D", c.d.as_ref(), (n, k))?,
            schedule("Q", c.q.as_ref(), (n, n))?,
            schedule("R", c.r.as_ref(), (k, k))?,
            g,
        )?;
        let eta = DVector::from_iterator(self.eta.len(), self.eta.iter().map(|&x| T::lit(x)));
        Scenario::new(model, grid, coeffs, eta, self.seed, self.mc_paths)
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario file serializes")
    }
}

/// Parses scenario text (TOML, or JSON when it starts with `{`).
pub fn parse_scenario<T: Real>(text: &str) -> Result<Scenario<T>> {
    ScenarioFile::parse(text)?.build()
}

/// Reads and validates a scenario file.
pub fn load_scenario<T: Real>(path: impl AsRef<Path>) -> Result<Scenario<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}
