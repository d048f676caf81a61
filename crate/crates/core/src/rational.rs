//! Exact rationals in lowest terms.
//!
//! Arithmetic is normalised through [`gcd`], which strips common powers of
//! two and reduces against the smaller operand first. Running means of
//! finite-precision readouts carry denominators of the form `2^k * m` with
//! `m` small, and plain binary gcd on those is quadratic in the bit length.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseRationalError {
    #[error("empty rational literal")]
    Empty,
    #[error("invalid rational literal `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

/// An exact rational `numer / denom` with `denom >= 1` and
/// `gcd(|numer|, denom) = 1`. Zero is `0/1`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Rational {
    numer: BigInt,
    denom: BigInt,
}

/// Greatest common divisor tuned for operands of very different size and
/// for power-of-two heavy operands.
pub fn gcd(a: &BigUint, b: &BigUint) -> BigUint {
    if a.is_zero() {
        return b.clone();
    }
    if b.is_zero() {
        return a.clone();
    }
    let ta = a.trailing_zeros().unwrap_or(0);
    let tb = b.trailing_zeros().unwrap_or(0);
    let shift = ta.min(tb);
    let a = a >> ta;
    let b = b >> tb;
    let (big, small) = if a.bits() >= b.bits() { (a, b) } else { (b, a) };
    let odd = if small.is_one() {
        small
    } else if let Some(s) = small.to_u64() {
        let r = (&big % s).to_u64().unwrap_or(0);
        BigUint::from(r.gcd(&s))
    } else if big.bits() > small.bits() + 64 {
        let r = &big % &small;
        r.gcd(&small)
    } else {
        big.gcd(&small)
    };
    odd << shift
}

/// `floor(n * 2^bits / d)`, using shifts for dyadic denominators.
fn scaled_floor(n: &BigInt, d: &BigInt, bits: u64) -> BigInt {
    match is_pow2(d.magnitude()) {
        Some(k) if k <= bits => n << (bits - k),
        Some(k) => n >> (k - bits),
        None => (n << bits).div_floor(d),
    }
}

fn biguint(x: &BigInt) -> BigUint {
    x.magnitude().clone()
}

impl Rational {
    /// Builds `numer / denom` and reduces it.
    ///
    /// Panics if `denom` is zero.
    pub fn new(numer: BigInt, denom: BigInt) -> Self {
        assert!(!denom.is_zero(), "rational with zero denominator");
        let (numer, denom) = if denom.is_negative() {
            (-numer, -denom)
        } else {
            (numer, denom)
        };
        if numer.is_zero() {
            return Self::zero();
        }
        let g = gcd(numer.magnitude(), denom.magnitude());
        if g.is_one() {
            return Rational { numer, denom };
        }
        let g = BigInt::from(g);
        Rational {
            numer: numer / &g,
            denom: denom / &g,
        }
    }

    pub fn from_integer(n: impl Into<BigInt>) -> Self {
        Rational {
            numer: n.into(),
            denom: BigInt::one(),
        }
    }

    pub fn from_i64s(numer: i64, denom: i64) -> Self {
        Self::new(BigInt::from(numer), BigInt::from(denom))
    }

    pub fn zero() -> Self {
        Self::from_integer(0)
    }

    pub fn one() -> Self {
        Self::from_integer(1)
    }

    /// `numer / 2^exp`.
    pub fn dyadic(numer: BigInt, exp: u64) -> Self {
        Self::new(numer, BigInt::one() << exp)
    }

    /// `2^-exp`.
    pub fn pow2_neg(exp: u64) -> Self {
        Rational {
            numer: BigInt::one(),
            denom: BigInt::one() << exp,
        }
    }

    pub fn numer(&self) -> &BigInt {
        &self.numer
    }

    pub fn denom(&self) -> &BigInt {
        &self.denom
    }

    pub fn is_zero(&self) -> bool {
        self.numer.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.numer.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.numer.is_negative()
    }

    pub fn is_integer(&self) -> bool {
        self.denom.is_one()
    }

    pub fn abs(&self) -> Self {
        Rational {
            numer: self.numer.abs(),
            denom: self.denom.clone(),
        }
    }

    pub fn recip(&self) -> Self {
        assert!(!self.is_zero(), "reciprocal of zero");
        Self::new(self.denom.clone(), self.numer.clone())
    }

    pub fn square(&self) -> Self {
        Rational {
            numer: &self.numer * &self.numer,
            denom: &self.denom * &self.denom,
        }
    }

    /// Largest integer `<= self`.
    pub fn floor(&self) -> BigInt {
        self.numer.div_floor(&self.denom)
    }

    /// Smallest integer `>= self`.
    pub fn ceil(&self) -> BigInt {
        -((-&self.numer).div_floor(&self.denom))
    }

    /// `floor(self * 2^bits)`.
    pub fn floor_scaled(&self, bits: u64) -> BigInt {
        scaled_floor(&self.numer, &self.denom, bits)
    }

    /// `ceil(self * 2^bits)`.
    pub fn ceil_scaled(&self, bits: u64) -> BigInt {
        -scaled_floor(&-&self.numer, &self.denom, bits)
    }

    /// The exponent `k` if the denominator is `2^k`.
    pub fn denom_log2(&self) -> Option<u64> {
        is_pow2(self.denom.magnitude())
    }

    pub fn mul_int(&self, k: impl Into<BigInt>) -> Self {
        let k = k.into();
        Self::new(&self.numer * k, self.denom.clone())
    }

    pub fn div_int(&self, k: impl Into<BigInt>) -> Self {
        let k = k.into();
        Self::new(self.numer.clone(), &self.denom * k)
    }

    /// Lossy conversion for display and plotting only.
    pub fn to_f64(&self) -> f64 {
        let nb = self.numer.bits() as i64;
        let db = self.denom.bits() as i64;
        // keep ~64 significant bits of each before dividing
        let ns = (nb - 64).max(0);
        let ds = (db - 64).max(0);
        let n = (&self.numer >> ns as usize).to_f64().unwrap_or(f64::NAN);
        let d = (&self.denom >> ds as usize).to_f64().unwrap_or(f64::NAN);
        n / d * 2f64.powi((ns - ds) as i32)
    }

    /// Bit-length based estimate `e` with `2^(e-1) <= |self| < 2^(e+1)`.
    pub(crate) fn log2_estimate(&self) -> i64 {
        self.numer.bits() as i64 - self.denom.bits() as i64
    }

    pub fn signum(&self) -> i32 {
        match self.numer.sign() {
            Sign::Minus => -1,
            Sign::NoSign => 0,
            Sign::Plus => 1,
        }
    }

    fn add_impl(a: &Rational, b: &Rational, negate_b: bool) -> Rational {
        let bn = if negate_b { -&b.numer } else { b.numer.clone() };
        if a.denom == b.denom {
            return Self::new(&a.numer + bn, a.denom.clone());
        }
        let g = gcd(&biguint(&a.denom), &biguint(&b.denom));
        if g.is_one() {
            return Self::new(&a.numer * &b.denom + bn * &a.denom, &a.denom * &b.denom);
        }
        let g = BigInt::from(g);
        let ad = &a.denom / &g;
        let bd = &b.denom / &g;
        Self::new(&a.numer * &bd + bn * &ad, &a.denom * bd)
    }

    fn mul_impl(a: &Rational, b: &Rational) -> Rational {
        if a.is_zero() || b.is_zero() {
            return Self::zero();
        }
        let g1 = BigInt::from(gcd(a.numer.magnitude(), b.denom.magnitude()));
        let g2 = BigInt::from(gcd(b.numer.magnitude(), a.denom.magnitude()));
        Rational {
            numer: (&a.numer / &g1) * (&b.numer / &g2),
            denom: (&a.denom / &g2) * (&b.denom / &g1),
        }
    }
}

impl Default for Rational {
    fn default() -> Self {
        Self::zero()
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.denom == other.denom {
            return self.numer.cmp(&other.numer);
        }
        let ls = self.signum();
        let rs = other.signum();
        if ls != rs {
            return ls.cmp(&rs);
        }
        (&self.numer * &other.denom).cmp(&(&other.numer * &self.denom))
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $body:expr) => {
        impl<'a> $tr<&'a Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                let f: fn(&Rational, &Rational) -> Rational = $body;
                f(self, rhs)
            }
        }
        impl $tr<Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                (&self).$method(&rhs)
            }
        }
        impl<'a> $tr<&'a Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                (&self).$method(rhs)
            }
        }
        impl<'a> $tr<Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                self.$method(&rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| Rational::add_impl(a, b, false));
binop!(Sub, sub, |a, b| Rational::add_impl(a, b, true));
binop!(Mul, mul, Rational::mul_impl);
binop!(Div, div, |a, b| Rational::mul_impl(a, &b.recip()));

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational {
            numer: -self.numer,
            denom: self.denom,
        }
    }
}

impl Neg for &Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        -(self.clone())
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Self {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

impl From<i64> for Rational {
    fn from(n: i64) -> Self {
        Self::from_integer(n)
    }
}

impl From<u64> for Rational {
    fn from(n: u64) -> Self {
        Self::from_integer(n)
    }
}

impl From<BigInt> for Rational {
    fn from(n: BigInt) -> Self {
        Self::from_integer(n)
    }
}

/// Canonical `num/den`, always with an explicit denominator.
impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer, self.denom)
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Accepts `n`, `n/d` and finite decimals such as `-0.125`.
impl FromStr for Rational {
    type Err = ParseRationalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.is_empty() {
            return Err(ParseRationalError::Empty);
        }
        let invalid = || ParseRationalError::Invalid(t.to_string());
        if let Some((n, d)) = t.split_once('/') {
            let n: BigInt = n.trim().parse().map_err(|_| invalid())?;
            let d: BigInt = d.trim().parse().map_err(|_| invalid())?;
            if d.is_zero() {
                return Err(ParseRationalError::ZeroDenominator(t.to_string()));
            }
            return Ok(Rational::new(n, d));
        }
        if let Some((int, frac)) = t.split_once('.') {
            let digits = format!("{int}{frac}");
            if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(invalid());
            }
            let n: BigInt = digits.parse().map_err(|_| invalid())?;
            let d = num_traits::pow(BigInt::from(10), frac.len());
            return Ok(Rational::new(n, d));
        }
        let n: BigInt = t.parse().map_err(|_| invalid())?;
        Ok(Rational::from_integer(n))
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(n) => Ok(Rational::from(n)),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Exact running sum that keeps an unreduced common denominator.
///
/// Adding `a/b` only multiplies through by `b / gcd(den, b)`, so sums of
/// dyadic readouts stay dyadic without ever reducing a large numerator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactSum {
    numer: BigInt,
    denom: BigUint,
}

impl Default for ExactSum {
    fn default() -> Self {
        ExactSum {
            numer: BigInt::zero(),
            denom: BigUint::one(),
        }
    }
}

fn is_pow2(x: &BigUint) -> Option<u64> {
    if x.count_ones() == 1 {
        x.trailing_zeros()
    } else {
        None
    }
}

fn exact_div(a: &BigUint, b: &BigUint) -> BigUint {
    match is_pow2(b) {
        Some(k) => a >> k,
        None => a / b,
    }
}

fn scale(x: &BigInt, f: &BigUint) -> BigInt {
    match is_pow2(f) {
        Some(k) => x << k,
        None => x * BigInt::from(f.clone()),
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: &Rational) {
        self.add_parts(x.numer(), x.denom().magnitude());
    }

    pub fn add_scaled(&mut self, x: &Rational, count: u64) {
        let n = x.numer() * BigInt::from(count);
        self.add_parts(&n, x.denom().magnitude());
    }

    fn add_parts(&mut self, n: &BigInt, d: &BigUint) {
        if n.is_zero() {
            return;
        }
        if &self.denom == d {
            self.numer += n;
            return;
        }
        let g = gcd(&self.denom, d);
        if &g == d {
            let f = exact_div(&self.denom, d);
            self.numer += scale(n, &f);
        } else if g == self.denom {
            let f = exact_div(d, &self.denom);
            self.numer = scale(&self.numer, &f) + n;
            self.denom = d.clone();
        } else {
            let fa = exact_div(d, &g);
            let fb = exact_div(&self.denom, &g);
            self.numer = scale(&self.numer, &fa) + scale(n, &fb);
            self.denom = &self.denom * fa;
        }
    }

    pub fn value(&self) -> Rational {
        Rational::new(self.numer.clone(), BigInt::from(self.denom.clone()))
    }

    /// `self / k` as a reduced rational.
    pub fn div_int(&self, k: u64) -> Rational {
        Rational::new(self.numer.clone(), BigInt::from(&self.denom * k))
    }
}
