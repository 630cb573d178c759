//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s
//! with `|lo| <= ulp(hi) / 2`, giving roughly 106 significant bits.
//!
//! Arithmetic, `sqrt`, `exp` and `ln` are accurate to a few units of
//! `2^-104`; everything the model forward pass touches is in that set.
//! Trigonometric and other rarely used functions fall back to `f64`
//! precision, as does everything below about `2^-969`, where the low word
//! goes subnormal.

use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

#[derive(Clone, Copy, Default, Debug)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

/// `a + b = s + e` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// As `two_sum`, valid when `|a| >= |b|`.
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// `a * b = p + e` exactly.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};
const LN10: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_10,
    lo: -2.170_756_223_382_249e-16,
};

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };
    /// `2^-104`
    pub const EPSILON: Self = Self {
        hi: 4.930_380_657_631_324e-32,
        lo: 0.0,
    };

    /// Normalizes an arbitrary pair.
    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn special(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Self { hi, lo }
    }

    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Self {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    fn dd_exp(self) -> Self {
        if self.hi.is_nan() {
            return self;
        }
        if self.hi > 709.78 {
            return Self::special(f64::INFINITY);
        }
        if self.hi < -745.2 {
            return Self::ZERO;
        }
        // x = k ln2 + r, then exp(r) = exp(r / 2^10)^(2^10).
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-10);
        let mut sum = Self::ZERO;
        let mut term = Self::ONE;
        for n in 1..=30 {
            term = term * r / Self::special(n as f64);
            sum += term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // expm1 form while squaring keeps the small result exact.
        for _ in 0..10 {
            sum = sum * (sum + Self::special(2.0));
        }
        let e = sum + Self::ONE;
        // Split the power of two so neither factor overflows.
        let k = k as i32;
        let half = k / 2;
        e.ldexp(half).ldexp(k - half)
    }

    fn dd_ln(self) -> Self {
        if self.hi.is_nan() || self.hi < 0.0 {
            return Self::special(f64::NAN);
        }
        if self.hi == 0.0 {
            return Self::special(f64::NEG_INFINITY);
        }
        if self.hi.is_infinite() {
            return self;
        }
        // ln x = ln m + e ln2 with m in [1, 2), keeping exp(-y) away from
        // the subnormal range where its low word would lose bits.
        let e = self.hi.log2().floor() as i32;
        let m = self.ldexp(-e);
        // Newton on exp(y) = m; each step doubles the correct digits.
        let mut y = Self::special(m.hi.ln());
        for _ in 0..2 {
            y = y + m * (-y).dd_exp() - Self::ONE;
        }
        y + LN2.mul_f64(e as f64)
    }

    fn dd_sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return if self.hi == 0.0 {
                Self::ZERO
            } else {
                Self::special(f64::NAN)
            };
        }
        if self.hi.is_infinite() {
            return self;
        }
        let q = self.hi.sqrt();
        let qd = Self::special(q);
        qd + (self - qd * qd) / Self::special(2.0 * q)
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        Self::special(v)
    }
}

impl PartialEq for DoubleDouble {
    fn eq(&self, other: &Self) -> bool {
        self.hi == other.hi && self.lo == other.lo
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&(self.hi + self.lo), f)
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

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        if !s.is_finite() {
            return Self::special(s);
        }
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        if !p.is_finite() {
            return Self::special(p);
        }
        let (hi, lo) = quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi));
        Self { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || b.hi.is_infinite() {
            return Self::special(q1);
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::special(q3)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, b: Self) -> Self {
        self - (self / b).trunc() * b
    }
}

macro_rules! assign_ops {
    ($($tr:ident $f:ident $op:tt),*) => {$(
        impl $tr for DoubleDouble {
            fn $f(&mut self, b: Self) {
                *self = *self $op b;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);

impl Zero for DoubleDouble {
    fn zero() -> Self {
        Self::ZERO
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        Self::ONE
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Self::special)
    }
}

impl DoubleDouble {
    fn whole(self) -> Option<i128> {
        let t = self.trunc();
        if !t.hi.is_finite() || t.hi.abs() > 1e38 {
            return None;
        }
        Some(t.hi as i128 + t.lo as i128)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        self.whole()?.try_into().ok()
    }
    fn to_u64(&self) -> Option<u64> {
        self.whole()?.try_into().ok()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        // `hi` rounds to the nearest double; the remainder fits exactly.
        let lo = (n as i128 - hi as i128) as f64;
        Some(Self::new(hi, lo))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n as i128 - hi as i128) as f64;
        Some(Self::new(hi, lo))
    }
    fn from_f32(n: f32) -> Option<Self> {
        Some(Self::special(n as f64))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Self::special(n))
    }
}

impl NumCast for DoubleDouble {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Self::special)
    }
}

impl Float for DoubleDouble {
    fn nan() -> Self {
        Self::special(f64::NAN)
    }
    fn infinity() -> Self {
        Self::special(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Self::special(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Self::special(-0.0)
    }
    fn min_value() -> Self {
        Self::special(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Self::special(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        Self::EPSILON
    }
    fn max_value() -> Self {
        Self::special(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Self {
        let hi = self.hi.floor();
        if hi == self.hi {
            Self::new(hi, self.lo.floor())
        } else {
            Self::special(hi)
        }
    }
    fn ceil(self) -> Self {
        -(-self).floor()
    }
    fn round(self) -> Self {
        let f = self.floor();
        let d = self - f;
        if d < Self::special(0.5) || (d == Self::special(0.5) && self.hi < 0.0) {
            f
        } else {
            f + Self::ONE
        }
    }
    fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.hi.is_sign_negative()) {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Self::special(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Self::ONE / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Self::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }
    fn powf(self, n: Self) -> Self {
        (n * self.dd_ln()).dd_exp()
    }
    fn sqrt(self) -> Self {
        self.dd_sqrt()
    }
    fn exp(self) -> Self {
        self.dd_exp()
    }
    fn exp2(self) -> Self {
        (self * LN2).dd_exp()
    }
    fn ln(self) -> Self {
        self.dd_ln()
    }
    fn log(self, base: Self) -> Self {
        self.dd_ln() / base.dd_ln()
    }
    fn log2(self) -> Self {
        self.dd_ln() / LN2
    }
    fn log10(self) -> Self {
        self.dd_ln() / LN10
    }
    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }
    #[allow(deprecated)]
    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            Self::ZERO
        }
    }
    fn cbrt(self) -> Self {
        if self.hi == 0.0 || !self.hi.is_finite() {
            return self;
        }
        // One Newton step from the f64 root.
        let y = Self::special(self.hi.cbrt());
        y - (y * y * y - self) / (Self::special(3.0) * y * y)
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).dd_sqrt()
    }
    fn sin(self) -> Self {
        Self::special(self.hi.sin())
    }
    fn cos(self) -> Self {
        Self::special(self.hi.cos())
    }
    fn tan(self) -> Self {
        Self::special(self.hi.tan())
    }
    fn asin(self) -> Self {
        Self::special(self.hi.asin())
    }
    fn acos(self) -> Self {
        Self::special(self.hi.acos())
    }
    fn atan(self) -> Self {
        Self::special(self.hi.atan())
    }
    fn atan2(self, other: Self) -> Self {
        Self::special(self.hi.atan2(other.hi))
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.dd_exp() - Self::ONE
    }
    fn ln_1p(self) -> Self {
        (self + Self::ONE).dd_ln()
    }
    fn sinh(self) -> Self {
        let e = self.dd_exp();
        (e - e.recip()).ldexp(-1)
    }
    fn cosh(self) -> Self {
        let e = self.dd_exp();
        (e + e.recip()).ldexp(-1)
    }
    fn tanh(self) -> Self {
        let e = (self + self).dd_exp();
        (e - Self::ONE) / (e + Self::ONE)
    }
    fn asinh(self) -> Self {
        (self + (self * self + Self::ONE).dd_sqrt()).dd_ln()
    }
    fn acosh(self) -> Self {
        (self + (self * self - Self::ONE).dd_sqrt()).dd_ln()
    }
    fn atanh(self) -> Self {
        ((Self::ONE + self) / (Self::ONE - self)).dd_ln().ldexp(-1)
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
    fn to_degrees(self) -> Self {
        self.mul_f64(180.0) / Self::new(std::f64::consts::PI, 1.224_646_799_147_353_2e-16)
    }
    fn to_radians(self) -> Self {
        self * Self::new(std::f64::consts::PI, 1.224_646_799_147_353_2e-16) / Self::special(180.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type D = DoubleDouble;

    fn d(x: f64) -> D {
        D::new(x, 0.0)
    }

    fn rel(a: D, b: D) -> f64 {
        let d = (a - b).abs();
        (d.hi + d.lo) / b.abs().hi.max(1e-300)
    }

    // Reference constants: correctly rounded double-double splits of the
    // decimal expansions of e, sqrt(2) and ln(10).
    #[test]
    fn known_constants() {
        let e = D::new(std::f64::consts::E, 1.445_646_891_729_250_2e-16);
        assert!(rel(D::ONE.exp(), e) < 1e-31, "{:?}", D::ONE.exp());
        let sqrt2 = D::new(std::f64::consts::SQRT_2, -9.667_293_313_452_913e-17);
        assert!(rel(d(2.0).sqrt(), sqrt2) < 1e-31);
        assert!(rel(d(2.0).ln(), LN2) < 1e-31);
        assert!(rel(d(10.0).ln(), LN10) < 1e-31);
    }

    #[test]
    fn one_third_times_three() {
        let third = D::ONE / d(3.0);
        assert!(third.lo != 0.0);
        assert!(rel(third * d(3.0), D::ONE) < 1e-31);
    }

    #[test]
    fn captures_what_f64_drops() {
        let tiny = d(1e-20);
        let s = D::ONE + tiny;
        assert_eq!(s.hi, 1.0);
        assert_eq!(s.lo, 1e-20);
        assert_eq!((s - D::ONE).hi, 1e-20);
    }

    #[test]
    fn specials() {
        assert!(d(-1.0).ln().is_nan());
        assert_eq!(D::ZERO.ln(), D::neg_infinity());
        assert_eq!(d(800.0).exp(), D::infinity());
        assert_eq!(d(-800.0).exp(), D::ZERO);
        assert!(D::nan().exp().is_nan());
        assert_eq!(d(1.0).max(D::nan()), D::ONE);
        assert_eq!(D::from_i64(i64::MAX).unwrap().to_i64(), Some(i64::MAX));
    }

    #[test]
    fn rounding() {
        assert_eq!(d(2.5).floor(), d(2.0));
        assert_eq!(d(-2.5).floor(), d(-3.0));
        assert_eq!(d(-2.5).trunc(), d(-2.0));
        assert_eq!(d(2.5).round(), d(3.0));
        assert_eq!(D::new(3.0, -1e-20).floor(), d(2.0));
        assert_eq!(D::new(3.0, 1e-20).ceil(), d(4.0));
    }

    proptest! {
        #[test]
        fn exp_ln_inverse(x in -600.0f64..700.0) {
            let d = d(x);
            prop_assert!((d.exp().ln() - d).abs().hi <= 1e-30 * x.abs().max(1.0));
        }

        #[test]
        fn exp_is_a_homomorphism(a in -30.0f64..30.0, b in -30.0f64..30.0) {
            let (a, b) = (d(a), d(b));
            prop_assert!(rel(a.exp() * b.exp(), (a + b).exp()) < 1e-29);
        }

        #[test]
        fn sqrt_squares_back(x in 1e-10f64..1e10) {
            let r = d(x).sqrt();
            prop_assert!(rel(r * r, d(x)) < 1e-30);
        }

        #[test]
        fn division_inverts_product(a in -1e6f64..1e6, b in 1e-3f64..1e3) {
            let (a, b) = (d(a) / d(7.0), d(b));
            prop_assert!(rel(a * b / b, a) < 1e-30 || a.hi == 0.0);
        }

        #[test]
        fn agrees_with_f64(a in -50.0f64..50.0, b in 0.5f64..50.0) {
            let (x, y) = (d(a), d(b));
            prop_assert!(((x * y).to_f64().unwrap() - a * b).abs() <= 1e-15 * (a * b).abs());
            prop_assert!(((x / y).to_f64().unwrap() - a / b).abs() <= 1e-15 * (a / b).abs());
            prop_assert!(((x.exp()).to_f64().unwrap() - a.exp()).abs() <= 4e-16 * a.exp());
            prop_assert!(((y.ln()).to_f64().unwrap() - b.ln()).abs() <= 4e-16 * b.ln().abs().max(1e-300) + 1e-300);
            prop_assert_eq!(x < y, a < b);
        }
    }
}
