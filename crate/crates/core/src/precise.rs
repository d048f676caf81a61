//! Certified fixed-point enclosures of `ln` and `ln ln`.
//!
//! An [`Enclosure`] `[lo, hi] / 2^bits` always contains the true value.
//! Series are summed with truncating integer arithmetic and an explicitly
//! counted error bound; no floating point is involved.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::rational::Rational;

/// Guard bits carried through intermediate steps.
const GUARD: u64 = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Enclosure {
    pub lo: BigInt,
    pub hi: BigInt,
    pub bits: u64,
}

/// `floor(x / 2^s)`; shifts on `BigInt` round toward negative infinity.
pub(crate) fn floor_shr(x: &BigInt, s: u64) -> BigInt {
    x >> s
}

pub(crate) fn ceil_shr(x: &BigInt, s: u64) -> BigInt {
    -floor_shr(&-x, s)
}

/// `ceil(sqrt(x))`.
pub(crate) fn sqrt_ceil(x: &BigUint) -> BigUint {
    let s = x.sqrt();
    if &(&s * &s) == x {
        s
    } else {
        s + 1u32
    }
}

impl Enclosure {
    pub fn point(value: BigInt, bits: u64) -> Self {
        Enclosure {
            lo: value.clone(),
            hi: value,
            bits,
        }
    }

    pub fn lower(&self) -> Rational {
        Rational::dyadic(self.lo.clone(), self.bits)
    }

    pub fn upper(&self) -> Rational {
        Rational::dyadic(self.hi.clone(), self.bits)
    }

    /// Width in units of `2^-bits`.
    pub fn width(&self) -> BigInt {
        &self.hi - &self.lo
    }

    /// Re-expresses the enclosure with `bits` fractional bits, rounding
    /// outward when precision is dropped.
    pub fn with_bits(&self, bits: u64) -> Self {
        if bits >= self.bits {
            let s = bits - self.bits;
            Enclosure {
                lo: &self.lo << s,
                hi: &self.hi << s,
                bits,
            }
        } else {
            let s = self.bits - bits;
            Enclosure {
                lo: floor_shr(&self.lo, s),
                hi: ceil_shr(&self.hi, s),
                bits,
            }
        }
    }

    fn scaled(&self, k: i64) -> Self {
        let k = BigInt::from(k);
        let (a, b) = (&self.lo * &k, &self.hi * &k);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        Enclosure {
            lo,
            hi,
            bits: self.bits,
        }
    }

    fn plus(&self, other: &Enclosure) -> Self {
        assert_eq!(self.bits, other.bits);
        Enclosure {
            lo: &self.lo + &other.lo,
            hi: &self.hi + &other.hi,
            bits: self.bits,
        }
    }
}

/// `atanh(p/q)` for `0 <= p/q <= 1/2`, at `w` fractional bits.
fn atanh_ratio(p: &BigUint, q: &BigUint, w: u64) -> Enclosure {
    debug_assert!(p * 2u32 <= *q);
    let p2 = p * p;
    let q2 = q * q;
    let mut t = (p << w) / q;
    let mut sum = BigUint::zero();
    let mut k = 0u64;
    while !t.is_zero() {
        sum += &t / (2 * k + 1);
        t = t * &p2 / &q2;
        k += 1;
    }
    // every computed term is at most the true one; per-term loss <= 7/3 ulp,
    // tail after the last nonzero term <= 16/9 ulp
    let err = BigUint::from(4 * (k + 2));
    Enclosure {
        lo: BigInt::from(sum.clone()),
        hi: BigInt::from(sum + err),
        bits: w,
    }
}

/// Lower bound for `atanh(z)` and its error bound, `z = z_fix / 2^w <= 1/2`.
fn atanh_fixed_lower(z: &BigUint, w: u64) -> (BigUint, u64) {
    let z2 = (z * z) >> w;
    let mut t = z.clone();
    let mut sum = BigUint::zero();
    let mut k = 0u64;
    while !t.is_zero() {
        sum += &t / (2 * k + 1);
        t = (t * &z2) >> w;
        k += 1;
    }
    (sum, 4 * (k + 2))
}

fn ln2(bits: u64) -> Enclosure {
    static CACHE: OnceLock<Mutex<Option<Enclosure>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(None));
    let mut slot = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(e) = slot.as_ref() {
        if e.bits >= bits {
            return e.with_bits(bits);
        }
    }
    let prev = slot.as_ref().map_or(0, |e| e.bits);
    let w = bits.max(2 * prev).max(256);
    let a = atanh_ratio(&BigUint::one(), &BigUint::from(3u32), w + GUARD).scaled(2);
    let e = a.with_bits(w);
    let out = e.with_bits(bits);
    *slot = Some(e);
    out
}

/// Encloses `ln x` for `x` in the (narrow, strictly positive) enclosure `x`.
pub fn ln_enclosure(x: &Enclosure) -> Enclosure {
    assert!(x.lo.is_positive(), "ln of a non-positive enclosure");
    let w = x.bits.max(64) + GUARD;
    let x = x.with_bits(w);
    // x / 2^e lies in [1, 2) at the lower end
    let e = x.lo.bits() as i64 - 1 - w as i64;
    let (ylo, yhi) = if e >= 0 {
        (floor_shr(&x.lo, e as u64), ceil_shr(&x.hi, e as u64))
    } else {
        (&x.lo << (-e) as u64, &x.hi << (-e) as u64)
    };
    // split y = r0 * (y / r0) with r0 = a / 2^32 <= y
    let a = (&ylo >> (w - 32) as usize)
        .to_biguint()
        .expect("normalized mantissa is positive");
    let two32 = BigUint::one() << 32usize;
    let ln_r0 = atanh_ratio(&(&a - &two32), &(&a + &two32), w).scaled(2);
    let r0 = BigInt::from(a << (w - 32) as usize);
    let zlo = ((&ylo - &r0) << w as usize).div_floor(&(&ylo + &r0));
    let num = (&yhi - &r0) << w as usize;
    let den = &yhi + &r0;
    let zhi = -((-num).div_floor(&den));
    assert!(
        zhi <= BigInt::one() << (w - 1) as usize,
        "enclosure too wide for ln"
    );
    let zlo = zlo.to_biguint().expect("y >= r0");
    let zhi = zhi.to_biguint().expect("y >= r0");
    let (slo, _) = atanh_fixed_lower(&zlo, w);
    let (shi, err) = atanh_fixed_lower(&zhi, w);
    let rest = Enclosure {
        lo: BigInt::from(slo),
        hi: BigInt::from(shi + err),
        bits: w,
    }
    .scaled(2);
    let l2 = ln2(w).scaled(e);
    l2.plus(&ln_r0).plus(&rest).with_bits(x.bits - GUARD)
}

/// Encloses `ln x` for a positive rational.
pub fn ln_rational(x: &Rational, bits: u64) -> Enclosure {
    assert!(x.is_positive(), "ln of a non-positive rational");
    let w = bits + GUARD + x.denom().bits();
    let e = Enclosure {
        lo: x.floor_scaled(w),
        hi: x.ceil_scaled(w),
        bits: w,
    };
    ln_enclosure(&e).with_bits(bits)
}

fn loglog_uncached(n: u128, bits: u64) -> Enclosure {
    if n <= 3 {
        return Enclosure::point(BigInt::zero(), bits);
    }
    let w = bits + 2 * GUARD;
    let ln_n = ln_enclosure(&Enclosure::point(BigInt::from(n), 0).with_bits(w));
    let mut out = ln_enclosure(&ln_n).with_bits(bits);
    if out.lo.sign() == Sign::Minus {
        out.lo = BigInt::zero();
    }
    out
}

/// Encloses `max(ln ln n, 0)`, which is defined as 0 for `n <= 3`.
///
/// Results are cached, since identifier runs ask for the same decision
/// times over and over.
pub fn loglog(n: u128, bits: u64) -> Enclosure {
    static CACHE: OnceLock<Mutex<HashMap<(u128, u64), Enclosure>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(e) = cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .get(&(n, bits))
    {
        return e.clone();
    }
    let e = loglog_uncached(n, bits);
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    if map.len() > 4096 {
        map.clear();
    }
    map.insert((n, bits), e.clone());
    e
}

/// Exact comparison of `max(ln ln n, 0)` with a rational.
pub fn compare_loglog(n: u128, r: &Rational) -> Ordering {
    if n <= 3 {
        return Rational::zero().cmp(r);
    }
    let v = (n as f64).ln().ln();
    let rf = r.to_f64();
    if rf.is_finite() && (v - rf).abs() > 1e-9 * (1.0 + v.abs()) {
        return v.partial_cmp(&rf).unwrap_or(Ordering::Equal);
    }
    // ln ln n is irrational for n >= 4, so refinement terminates
    let mut bits = 128;
    loop {
        let e = loglog_uncached(n, bits);
        if e.upper() < *r {
            return Ordering::Less;
        }
        if e.lower() > *r {
            return Ordering::Greater;
        }
        bits *= 2;
    }
}

/// `f64` estimate of `ln ln n` for display and plotting.
pub fn loglog_f64(n: u128) -> f64 {
    if n <= 3 {
        0.0
    } else {
        (n as f64).ln().ln().max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dec(e: &Enclosure, digits: usize) -> (String, String) {
        let scale = num_bigint::BigInt::from(10u32).pow(digits as u32);
        let lo = (&e.lo * &scale) >> e.bits as usize;
        let hi: BigInt = ((&e.hi * &scale) >> e.bits as usize) + 1;
        (lo.to_string(), hi.to_string())
    }

    #[test]
    fn ln2_digits() {
        // ln 2 = 0.69314718055994530941723212145817656807550013436025...
        let e = ln2(200);
        let (lo, hi) = dec(&e, 50);
        let want: BigInt = "69314718055994530941723212145817656807550013436025"
            .parse()
            .unwrap();
        assert!(lo.parse::<BigInt>().unwrap() <= want);
        assert!(hi.parse::<BigInt>().unwrap() >= want);
        assert!(e.width() < BigInt::from(1u64 << 20));
    }

    #[test]
    fn ln_of_rationals_brackets_reference() {
        // ln 10 = 2.302585092994045684017991454684364207601101488628772976...
        let e = ln_rational(&Rational::from(10i64), 180);
        let l = e.lower().to_f64();
        assert!((l - std::f64::consts::LN_10).abs() < 1e-15);
        let want: BigInt = "2302585092994045684017991454684364207601101488628"
            .parse()
            .unwrap();
        let (lo, hi) = dec(&e, 48);
        assert!(lo.parse::<BigInt>().unwrap() <= want);
        assert!(hi.parse::<BigInt>().unwrap() >= want);
        // ln(3/7) is negative
        let e = ln_rational(&Rational::from_i64s(3, 7), 100);
        assert!(e.hi.is_negative());
        assert!((e.lower().to_f64() - (3.0f64 / 7.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn loglog_matches_float_and_clamps() {
        for n in [1u128, 2, 3] {
            assert_eq!(loglog(n, 64).lo, BigInt::zero());
            assert_eq!(loglog(n, 64).hi, BigInt::zero());
        }
        for n in [
            4u128,
            5,
            100,
            4096,
            117_649,
            1_000_000_000_000,
            10u128.pow(24),
        ] {
            let e = loglog(n, 120);
            let f = (n as f64).ln().ln();
            assert!(e.lower().to_f64() <= f + 1e-14, "n={n}");
            assert!(e.upper().to_f64() >= f - 1e-14, "n={n}");
            assert!(e.width() <= BigInt::from(64u32), "n={n}");
        }
    }

    #[test]
    fn loglog_high_precision_is_narrow() {
        let e = loglog(46_656, 4_000);
        assert!(e.width() <= BigInt::from(64u32));
        let coarse = loglog(46_656, 100);
        assert!(e.lower() <= coarse.upper() && coarse.lower() <= e.upper());
    }

    #[test]
    fn compare_loglog_is_exact() {
        let n = 100u128;
        let e = loglog_uncached(n, 300);
        let below = e.lower() - Rational::pow2_neg(200);
        let above = e.upper() + Rational::pow2_neg(200);
        assert_eq!(compare_loglog(n, &below), Ordering::Greater);
        assert_eq!(compare_loglog(n, &above), Ordering::Less);
        assert_eq!(compare_loglog(3, &Rational::zero()), Ordering::Equal);
    }
}
