//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Floating point scalar usable by the estimator: `f32` or `f64`.
///
/// Besides the field operations coming from [`RealField`], the trait carries
/// the few precision-dependent constants the algorithms need.
pub trait Real: RealField + Copy + FromPrimitive + Default + Send + Sync + 'static {
    /// Below this rotation angle the sin/cos coefficients of `Exp`/`Log`
    /// switch to their Taylor expansion.
    fn small_angle() -> Self;

    /// Default step for central finite differences on the state manifold.
    fn fd_step() -> Self;

    /// Lossy conversion to `f64`, used for logging and diagnostics.
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    fn small_angle() -> Self {
        1e-8
    }

    // cube root of f64 epsilon, rounded
    fn fd_step() -> Self {
        1e-5
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn small_angle() -> Self {
        1e-4
    }

    // cube root of f32 epsilon, rounded
    fn fd_step() -> Self {
        5e-3
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}
