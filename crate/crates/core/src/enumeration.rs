//! The fixed one-to-one enumeration `i -> q_i` of the rationals.
//!
//! `q_1 = 0`, and for `m >= 1`, `q_{2m} = cw(m)` and `q_{2m+1} = -cw(m)`
//! where `cw` is the Calkin-Wilf sequence: `cw(1) = 1`,
//! `cw(2n) = cw(n) / (cw(n) + 1)`, `cw(2n + 1) = cw(n) + 1`.
//!
//! Indices are 1-based. Index 0 is reserved for the identifier's
//! "mean is not in the class" output.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnumerationError {
    #[error("enumeration indices start at 1")]
    ZeroIndex,
}

/// Calkin-Wilf value `cw(m)` as `(numerator, denominator)`, reading the
/// bits of `m` below the leading one from most to least significant.
fn calkin_wilf(m: &BigUint) -> (BigUint, BigUint) {
    let mut a = BigUint::one();
    let mut b = BigUint::one();
    let bits = m.bits();
    for k in (0..bits.saturating_sub(1)).rev() {
        if m.bit(k) {
            a += &b;
        } else {
            b += &a;
        }
    }
    (a, b)
}

/// `q_i` for an arbitrary-precision index.
pub fn enumerate_big(i: &BigUint) -> Result<Rational, EnumerationError> {
    if i.is_zero() {
        return Err(EnumerationError::ZeroIndex);
    }
    if i.is_one() {
        return Ok(Rational::zero());
    }
    let (m, negative) = i.div_rem(&BigUint::from(2u32));
    let (a, b) = calkin_wilf(&m);
    let mut numer = BigInt::from(a);
    if !negative.is_zero() {
        numer = -numer;
    }
    Ok(Rational::new(numer, BigInt::from(b)))
}

/// `q_i`.
pub fn enumerate(i: u64) -> Result<Rational, EnumerationError> {
    enumerate_big(&BigUint::from(i))
}

/// The unique index `i` with `q_i = q`.
pub fn index_of(q: &Rational) -> BigUint {
    if q.is_zero() {
        return BigUint::one();
    }
    let mut a = q.numer().abs().to_biguint().expect("nonnegative");
    let mut b = q.denom().to_biguint().expect("positive");
    // Walk from q up to the root, collecting runs of identical branch bits.
    let mut runs: Vec<(bool, BigUint)> = Vec::new();
    while !(a.is_one() && b.is_one()) {
        if a < b {
            let (mut k, r) = b.div_rem(&a);
            if r.is_zero() {
                k -= 1u32;
            }
            b -= &a * &k;
            runs.push((false, k));
        } else {
            let (mut k, r) = a.div_rem(&b);
            if r.is_zero() {
                k -= 1u32;
            }
            a -= &b * &k;
            runs.push((true, k));
        }
    }
    let mut m = BigUint::one();
    for (bit, len) in runs.iter().rev() {
        let len = usize::try_from(len.clone()).expect("Calkin-Wilf path length fits in memory");
        m <<= len;
        if *bit {
            m += (BigUint::one() << len) - 1u32;
        }
    }
    let mut i = m << 1usize;
    if q.is_negative() {
        i += 1u32;
    }
    i
}

/// `index_of(q)` if it fits in a `u64`.
pub fn index_of_u64(q: &Rational) -> Option<u64> {
    u64::try_from(index_of(q)).ok()
}

/// A small enumerated rational, kept in machine words for fast scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallRational {
    pub negative: bool,
    pub numer: u64,
    pub denom: u64,
}

impl SmallRational {
    pub fn to_rational(self) -> Rational {
        let n = BigInt::from(self.numer);
        Rational::new(if self.negative { -n } else { n }, BigInt::from(self.denom))
    }
}

/// Sequential walk `q_1, q_2, ...` using Newman's successor formula
/// `cw(m + 1) = 1 / (2 floor(x) - x + 1)` with `x = cw(m)`.
///
/// This does not share code with [`enumerate`], so the two can check each
/// other.
#[derive(Debug, Clone)]
pub struct QEnumeration {
    index: u64,
    // cw(m) for the current positive half
    cw: (u64, u64),
}

impl QEnumeration {
    pub fn new() -> Self {
        QEnumeration {
            index: 0,
            cw: (1, 1),
        }
    }
}

impl Default for QEnumeration {
    fn default() -> Self {
        Self::new()
    }
}

impl Iterator for QEnumeration {
    type Item = (u64, SmallRational);

    fn next(&mut self) -> Option<Self::Item> {
        self.index = self.index.checked_add(1)?;
        let i = self.index;
        if i == 1 {
            return Some((
                1,
                SmallRational {
                    negative: false,
                    numer: 0,
                    denom: 1,
                },
            ));
        }
        if i > 2 && i.is_multiple_of(2) {
            let (a, b) = self.cw;
            let f = a / b;
            // denominator 2*f*b - a + b = b*(2f+1) - a
            let d = b.checked_mul(2 * f + 1)?.checked_sub(a)?;
            self.cw = (b, d);
        }
        let (a, b) = self.cw;
        Some((
            i,
            SmallRational {
                negative: i % 2 == 1,
                numer: a,
                denom: b,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn r(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn spec_examples() {
        assert_eq!(enumerate(1).unwrap(), r("0"));
        assert_eq!(enumerate(4).unwrap(), r("1/2"));
        assert_eq!(enumerate(7).unwrap(), r("-2"));
        assert_eq!(index_of(&r("0")), BigUint::from(1u32));
        assert_eq!(index_of(&r("1/2")), BigUint::from(4u32));
        assert_eq!(index_of(&r("-2")), BigUint::from(7u32));
        assert_eq!(enumerate(0), Err(EnumerationError::ZeroIndex));
    }

    #[test]
    fn first_terms() {
        let got: Vec<String> = (1..=11)
            .map(|i| enumerate(i).unwrap().to_string())
            .collect();
        let want = [
            "0/1", "1/1", "-1/1", "1/2", "-1/2", "2/1", "-2/1", "1/3", "-1/3", "3/2", "-3/2",
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn newman_walk_agrees_with_recurrence() {
        for (i, q) in QEnumeration::new().take(20_000) {
            assert_eq!(q.to_rational(), enumerate(i).unwrap(), "index {i}");
        }
    }

    #[test]
    fn bijective_on_prefix() {
        let mut seen = HashSet::new();
        for i in 1..=100_000u64 {
            let q = enumerate(i).unwrap();
            assert_eq!(index_of(&q), BigUint::from(i));
            assert!(seen.insert(q), "duplicate at {i}");
        }
    }

    #[test]
    fn inverse_on_small_rationals() {
        for n in -100i64..=100 {
            for d in 1i64..=100 {
                let q = Rational::from_i64s(n, d);
                assert_eq!(enumerate_big(&index_of(&q)).unwrap(), q);
            }
        }
    }

    #[test]
    fn long_partial_quotients() {
        // 1000 = cw(2^1000 - 1), so its index is 2^1001 - 2
        let i = index_of(&r("1000"));
        assert_eq!(i, (BigUint::one() << 1001usize) - 2u32);
        assert_eq!(enumerate_big(&i).unwrap(), r("1000"));
        let q = r("-123456789/1000000007");
        assert_eq!(enumerate_big(&index_of(&q)).unwrap(), q);
    }
}
