//! Scalar abstraction shared by all numeric routines.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst};

/// Floating-point element type for matrices, operators and tapes.
///
/// Implemented for `f32` and `f64`. Anything that needs special functions
/// (log-gamma) or random draws goes through `f64` and converts back.
pub trait Scalar:
    Float + FloatConst + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; never fails for finite inputs.
    fn of(v: f64) -> Self {
        Self::from(v).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
