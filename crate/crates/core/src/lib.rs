//! Closed-loop synthesis and certification for stochastic linear-quadratic
//! control of spectrally truncated evolution equations.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

// `!(a > b)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convexity;
pub mod error;
pub(crate) mod integrate;
pub mod io;
pub mod linalg;
pub mod lyapunov;
pub mod moments;
pub mod riccati;
pub mod scalar;
pub mod scenario;
pub mod sde;
pub mod spectral;
pub mod verify;

pub use convexity::{
    assess_convexity, certify_via_riccati, check_as34, check_classical, control_transform_conditioning, default_eps0,
    estimate_c0, hessian_lambda_min, ConvexityOptions, ConvexityReport, Verdict, Witness,
};
pub use error::{Error, Result};
pub use integrate::Stage;
pub use linalg::{pseudo_inverse, PseudoInverse};
pub use lyapunov::{
    lyapunov_psd_check, solve_lyapunov, solve_lyapunov_generic, FeedbackPath, LyapunovTerms, MatrixPath, PsdCheck,
};
pub use moments::{exact_cost, exact_cost_deterministic, terminal_moments, TerminalMoments};
pub use riccati::{
    certify, feedback_from, riccati_direct, riccati_iterate, CertificateKind, RegularityCertificate, RiccatiOptions,
    RiccatiSolution,
};
pub use scalar::Real;
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioFile};
pub use sde::{
    estimate_cost, mean_stderr, simulate, simulate_with_aux, ControlLaw, ControlPath, ControlPolicy, CostEstimate,
    PathEnsemble, SimOptions,
};
pub use spectral::{CoefficientSet, Schedule, SpectralModel, TimeGrid};
pub use verify::{
    check_perturbation, verify_value_function, PerturbationKind, PerturbationRow, ValueReport, VerifyOptions,
};

pub type SpectralModel64 = SpectralModel<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type CoefficientSet64 = CoefficientSet<f64>;
pub type Scenario64 = Scenario<f64>;
pub type MatrixPath64 = MatrixPath<f64>;
pub type FeedbackPath64 = FeedbackPath<f64>;
pub type RiccatiSolution64 = RiccatiSolution<f64>;
pub type ControlPath64 = ControlPath<f64>;
pub type ControlPolicy64 = ControlPolicy<f64>;
pub type PathEnsemble64 = PathEnsemble<f64>;
pub type ConvexityReport64 = ConvexityReport<f64>;
pub type ValueReport64 = ValueReport<f64>;
