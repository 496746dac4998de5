//! Floating-point abstraction shared by the factor model, exposure ledger and metrics.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used for scores, exposures and metric values.
///
/// Implemented for `f32` and `f64`. The simulator itself runs in `f64`; `f32`
/// is useful for memory-bound factor models.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self;

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Position weight `1 / log2(1 + k)` for a 1-based rank `k`.
#[inline]
pub fn position_weight<S: Scalar>(rank: usize) -> S {
    S::one() / S::of_usize(rank + 1).log2()
}

/// Sum of position weights over ranks `1..=k`.
pub fn discount_mass<S: Scalar>(k: usize) -> S {
    (1..=k).map(position_weight::<S>).sum()
}
