//! Floating point abstraction for the scalar-level kernels (links and moment functions).

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;

/// Floating point: f32 or f64.
pub trait Real: Float + FromPrimitive + Debug + Send + Sync + 'static {
    /// Lossless-enough conversion from an `f64` constant.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
