use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type used by the transport, fusion and encoder math.
///
/// Implemented for `f32` and `f64`. Tolerances are expressed in `f64` and
/// widened to the type's own precision through [`Scalar::tolerance`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must be representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }

    /// `base` in `f64`, or a few dozen ulps scaled by `terms` when the type is
    /// too coarse to resolve `base`.
    #[inline]
    fn tolerance(base: f64, terms: usize) -> Self {
        let eps = Self::epsilon().as_f64() * 64.0 * terms.max(1) as f64;
        Self::lit(base.max(eps))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
