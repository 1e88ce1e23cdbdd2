//! Floating-point scalar abstraction shared by every numeric routine in the crate.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

/// A real number type usable for features, weights and probabilities.
///
/// Implemented for `f32` and `f64`. `Display` must produce a representation
/// that parses back to the identical value, which holds for both primitive
/// float types and is what the text formats rely on for bit-exact round trips.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Lower clamp applied to every probability before taking a logarithm.
    fn prob_floor() -> Self {
        Self::from_f64(1e-12).unwrap()
    }

    /// Upper clamp applied to every probability produced by a node classifier.
    fn prob_ceil() -> Self {
        Self::one() - Self::prob_floor()
    }

    /// Lossless-enough conversion from a literal; panics only for NaN-like misuse.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Clamp a probability into `[1e-12, 1 - 1e-12]`.
#[inline]
pub fn clamp_prob<T: Real>(p: T) -> T {
    p.max(T::prob_floor()).min(T::prob_ceil())
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(u))` without overflow.
#[inline]
pub fn softplus<T: Real>(u: T) -> T {
    u.max(T::zero()) + (-u.abs()).exp().ln_1p()
}
