//! Tolerances of the form `base + coeff * 2^-exp`.
//!
//! Decision thresholds contain a `2^-n` term. Once `n` runs into the
//! billions that term cannot be written out as a rational, but it can still
//! be compared exactly against any explicit rational, which is all the
//! identifier needs.

use std::cmp::Ordering;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::rational::Rational;

/// Exponents up to this size are expanded into an exact rational.
pub const MATERIALIZE_BITS: u128 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tolerance {
    Exact(Rational),
    Dyadic {
        base: Rational,
        coeff: Rational,
        exp: u128,
    },
}

impl Tolerance {
    pub fn exact(r: Rational) -> Self {
        Tolerance::Exact(r)
    }

    /// `2^-exp`.
    pub fn pow2(exp: u128) -> Self {
        Self::dyadic(Rational::zero(), Rational::one(), exp)
    }

    /// `base + coeff * 2^-exp`, expanded when `exp` is small.
    pub fn dyadic(base: Rational, coeff: Rational, exp: u128) -> Self {
        if coeff.is_zero() {
            Tolerance::Exact(base)
        } else if exp <= MATERIALIZE_BITS {
            Tolerance::Exact(base + coeff * Rational::pow2_neg(exp as u64))
        } else {
            Tolerance::Dyadic { base, coeff, exp }
        }
    }

    pub fn as_exact(&self) -> Option<&Rational> {
        match self {
            Tolerance::Exact(r) => Some(r),
            Tolerance::Dyadic { .. } => None,
        }
    }

    /// A rational that is at most this tolerance.
    pub fn lower_bound(&self) -> Rational {
        match self {
            Tolerance::Exact(r) => r.clone(),
            Tolerance::Dyadic { base, coeff, .. } => {
                if coeff.is_negative() {
                    base + coeff * Rational::pow2_neg(MATERIALIZE_BITS as u64)
                } else {
                    base.clone()
                }
            }
        }
    }

    /// A rational that is at least this tolerance.
    pub fn upper_bound(&self) -> Rational {
        match self {
            Tolerance::Exact(r) => r.clone(),
            Tolerance::Dyadic { base, coeff, .. } => {
                if coeff.is_positive() {
                    base + coeff * Rational::pow2_neg(MATERIALIZE_BITS as u64)
                } else {
                    base.clone()
                }
            }
        }
    }

    /// Sum of two tolerances. Two symbolic terms must share an exponent.
    pub fn add(&self, other: &Tolerance) -> Option<Tolerance> {
        use Tolerance::*;
        Some(match (self, other) {
            (Exact(a), Exact(b)) => Exact(a + b),
            (Exact(a), Dyadic { base, coeff, exp }) | (Dyadic { base, coeff, exp }, Exact(a)) => {
                Self::dyadic(base + a, coeff.clone(), *exp)
            }
            (
                Dyadic {
                    base: b1,
                    coeff: c1,
                    exp: e1,
                },
                Dyadic {
                    base: b2,
                    coeff: c2,
                    exp: e2,
                },
            ) => {
                if e1 != e2 {
                    return None;
                }
                Self::dyadic(b1 + b2, c1 + c2, *e1)
            }
        })
    }

    /// `d < self`, decided exactly.
    pub fn exceeds(&self, d: &Rational) -> bool {
        match self {
            Tolerance::Exact(t) => d < t,
            Tolerance::Dyadic { base, coeff, exp } => {
                let r = d - base;
                let (rs, cs) = (r.signum(), coeff.signum());
                if cs == 0 {
                    return rs < 0;
                }
                if rs <= 0 && cs > 0 {
                    return true;
                }
                if rs >= 0 && cs < 0 {
                    return false;
                }
                let ord = compare_magnitude(&r, coeff, *exp);
                if cs > 0 {
                    ord == Ordering::Less
                } else {
                    ord == Ordering::Greater
                }
            }
        }
    }

    pub fn is_positive(&self) -> bool {
        self.exceeds(&Rational::zero())
    }
}

/// Compares `|r|` with `|c| * 2^-exp`.
fn compare_magnitude(r: &Rational, c: &Rational, exp: u128) -> Ordering {
    let lr = r.log2_estimate() as i128;
    let lc = c.log2_estimate() as i128 - exp as i128;
    if lr > lc + 2 {
        return Ordering::Greater;
    }
    if lr + 2 < lc {
        return Ordering::Less;
    }
    // magnitudes are close, so 2^-exp is no bigger than r itself
    let t = c.abs() * Rational::pow2_neg(exp as u64);
    r.abs().cmp(&t)
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tolerance::Exact(r) => write!(f, "{r}"),
            Tolerance::Dyadic { base, coeff, exp } => write!(f, "{base}+({coeff})*2^-{exp}"),
        }
    }
}

impl Serialize for Tolerance {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}
