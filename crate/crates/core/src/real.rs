use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::Float;

/// Floating-point element type of tensors: `f32` for training, `f64` for
/// gradient verification.
pub trait Real: Float + Debug + Display + Default + Sum + Send + Sync + 'static {
    const BITS: u32;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
