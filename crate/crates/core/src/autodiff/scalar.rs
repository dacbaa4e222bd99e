use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type of a computation graph: the arithmetic and
/// transcendental functions the op set needs, nothing more.
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Default
    + Send
    + Sync
    + Sum
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// Significand-relevant width, for diagnostics.
    const BITS: u32;

    fn from_real(v: f64) -> Self;
    /// Nearest `f64`.
    fn to_real(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_nan(self) -> bool;

    fn zero() -> Self {
        Self::from_real(0.0)
    }

    fn one() -> Self {
        Self::from_real(1.0)
    }

    fn neg_infinity() -> Self {
        Self::from_real(f64::NEG_INFINITY)
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }
}

macro_rules! native_scalar {
    ($t:ty, $bits:expr) => {
        impl Scalar for $t {
            const BITS: u32 = $bits;

            #[inline]
            fn from_real(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_real(self) -> f64 {
                self as f64
            }

            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }

            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }

            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }

            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }

            #[inline]
            fn is_nan(self) -> bool {
                <$t>::is_nan(self)
            }

            #[inline]
            fn zero() -> Self {
                0.0
            }

            #[inline]
            fn one() -> Self {
                1.0
            }

            #[inline]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }

            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
        }
    };
}

native_scalar!(f32, 32);
native_scalar!(f64, 64);
