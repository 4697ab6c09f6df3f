//! Floating-point scalar abstraction.
//!
//! All tensor arithmetic, neuron dynamics, and optimizer math are generic
//! over [`Scalar`]; the pipeline instantiates everything at `f64` (see the
//! crate-root aliases) because the file formats and the determinism
//! guarantees are specified for 64-bit floats.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Floating-point element type usable by the tensor engine: `f32` or `f64`.
pub trait Scalar: Float + NumAssign + Sum + fmt::Debug + fmt::Display + 'static {
    /// Lossy conversion from `f64`, for literals in generic code.
    fn from_f64(x: f64) -> Self;

    /// Lossy conversion to `f64`, for serialization and reporting.
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
