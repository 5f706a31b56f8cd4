//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar accepted by the solvers: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + Debug + Display + 'static {
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Absolute tolerance `x`, floored at a small multiple of machine epsilon so
    /// that thresholds tuned for `f64` stay meaningful in lower precision.
    #[inline]
    fn tolerance(x: f64) -> Self {
        let floor = Self::default_epsilon() * Self::lit(128.0);
        Self::lit(x).max(floor)
    }
}

impl Real for f32 {}
impl Real for f64 {}
