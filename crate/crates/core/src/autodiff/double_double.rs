//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s,
//! giving roughly 106 bits of significand. Used only as the numeric side of
//! [`super::extended_diff_check`], where plain `f64` rounding noise in the
//! loss swamps gradients smaller than about 1e-5.
//!
//! Algorithms follow the classic error-free transformations (two-sum,
//! fused-multiply-add two-product); transcendental functions use range
//! reduction plus Taylor series (exp) and Newton refinement (ln, sqrt).

use std::cmp::Ordering;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn normalized(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return Self { hi, lo: 0.0 };
        }
        let (s, e) = quick_two_sum(hi, lo);
        Self { hi: s, lo: e }
    }

    fn ldexp(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn expm1_small(r: Self) -> Self {
        // r is tiny after range reduction: Taylor series until terms vanish.
        let mut term = r;
        let mut sum = r;
        for n in 2..30 {
            term = term * r / DoubleDouble::from(n as f64);
            sum += term;
            if term.hi.abs() < 1e-36 * sum.hi.abs().max(1e-300) {
                break;
            }
        }
        sum
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        if !self.hi.is_finite() || !o.hi.is_finite() {
            return Self::from(self.hi + o.hi);
        }
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::normalized(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;

    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;

    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;

    fn mul(self, o: Self) -> Self {
        if !self.hi.is_finite() || !o.hi.is_finite() {
            return Self::from(self.hi * o.hi);
        }
        let (p, e) = two_prod(self.hi, o.hi);
        Self::normalized(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;

    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        if !q1.is_finite() {
            return Self::from(q1);
        }
        let r = self - o * Self::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Self::from(q2);
        let q3 = r.hi / o.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Self { hi: s, lo: e } + Self::from(q3)
    }
}

impl AddAssign for DoubleDouble {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for DoubleDouble {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for DoubleDouble {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Sum for DoubleDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

impl Scalar for DoubleDouble {
    const BITS: u32 = 128;

    fn from_real(v: f64) -> Self {
        Self::from(v)
    }

    fn to_real(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi.is_nan() {
            return self;
        }
        if self.hi < -745.0 {
            return Self::default();
        }
        if self.hi > 709.0 {
            return Self::from(f64::INFINITY);
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * Self::from(k);
        // exp(r) = (1 + expm1(r / 2^10))^(2^10)
        let mut e = Self::expm1_small(r.ldexp(-10));
        for _ in 0..10 {
            e = e * (e + Self::from(2.0));
        }
        (e + Self::from(1.0)).ldexp(k as i32)
    }

    fn ln(self) -> Self {
        if self.hi.is_nan() || self.hi < 0.0 {
            return Self::from(f64::NAN);
        }
        if self.hi == 0.0 {
            return Self::from(f64::NEG_INFINITY);
        }
        let mut y = Self::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Self::from(1.0);
        }
        y
    }

    fn tanh(self) -> Self {
        if self.hi > 40.0 {
            return Self::from(1.0);
        }
        if self.hi < -40.0 {
            return Self::from(-1.0);
        }
        let t = (self + self).exp();
        (t - Self::from(1.0)) / (t + Self::from(1.0))
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::from(self.hi.sqrt());
        }
        let q = Self::from(self.hi.sqrt());
        q + (self - q * q) / (q + q)
    }

    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(v: f64) -> DoubleDouble {
        DoubleDouble::from(v)
    }

    #[test]
    fn arithmetic_keeps_low_order_bits() {
        // (1 + 2^-60) - 1 is invisible in f64 but exact here.
        let tiny = 2f64.powi(-60);
        let x = dd(1.0) + dd(tiny) - dd(1.0);
        assert_eq!(x.to_real(), tiny);
        let third = dd(1.0) / dd(3.0);
        let back = third * dd(3.0) - dd(1.0);
        assert!(back.to_real().abs() < 1e-31);
    }

    #[test]
    fn transcendental_identities() {
        for &v in &[-3.5, -0.25, 1e-8, 0.7, 2.0, 11.0] {
            let x = dd(v);
            let round_trip = x.exp().ln() - x;
            assert!(round_trip.to_real().abs() < 1e-29 * v.abs().max(1.0), "{v}");
            assert!((x.exp().to_real() - v.exp()).abs() <= 4.0 * f64::EPSILON * v.exp());
            assert!((x.tanh().to_real() - v.tanh()).abs() < 1e-15);
        }
        let two = dd(2.0).sqrt();
        assert!((two * two - dd(2.0)).to_real().abs() < 1e-31);
        assert_eq!(dd(-1e9).exp().to_real(), 0.0);
    }
}
