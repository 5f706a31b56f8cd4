use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{field} is not symmetric (max |M - M^T| = {defect:e} at t = {time})")]
    Asymmetry { field: String, time: f64, defect: f64 },

    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    #[error("non-finite value during {stage} at node {node}")]
    NonFinite { stage: &'static str, node: usize },

    #[error("path {path} blew up at node {node}")]
    PathBlowUp { path: usize, node: usize },

    #[error("K is not invertible at iteration {iteration}, node {node} (lambda_min(K) = {lambda_min:e})")]
    KNotInvertible {
        iteration: usize,
        node: usize,
        lambda_min: f64,
    },

    #[error("no convergence after {iterations} iterations (last update {last_update:e})")]
    MaxIterExceeded { iterations: usize, last_update: f64 },

    #[error("monotonicity violated at iteration {iteration}, node {node} (lambda_min(P_j - P_j+1) = {lambda_min:e})")]
    MonotonicityViolation {
        iteration: usize,
        node: usize,
        lambda_min: f64,
    },

    #[error("Riccati solution is not certified: {0}")]
    NotCertified(String),

    #[error("policy is not a deterministic open-loop control")]
    NonDeterministicPolicy,

    #[error("D is not square ({rows}x{cols})")]
    DNotSquare { rows: usize, cols: usize },

    #[error("D is singular at node {node} (sigma_min = {sigma_min:e})")]
    DSingular { node: usize, sigma_min: f64 },

    #[error("control transform is numerically singular")]
    SingularTransform,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
