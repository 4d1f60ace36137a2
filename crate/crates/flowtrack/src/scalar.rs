//! Scalar abstraction for the numeric core.
//!
//! Everything that does tracking math is generic over [`Real`] so the same
//! code runs in `f32` and `f64`. The crate root fixes `f64` aliases for the
//! I/O and CLI layers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant; panics if it is not representable.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }

    /// Converts a count; panics if it is not representable.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    /// Lossy conversion back to `f64` (exact for `f32`/`f64` inputs).
    #[inline]
    fn to_f64_(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
