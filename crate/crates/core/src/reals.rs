//! Cauchy presentations of countable real families, certified inclusion,
//! and the bounded least-index search used by the general identifier.
//!
//! A presentation exposes rational bounds `L(j,m) <= s_j <= U(j,m)` with
//! `U - L <= 2^-m`. Built-in members and their bounds:
//!
//! * `rational:<q>`: `L = U = q`.
//! * `sqrt:<q>` (and `sqrt2`, `sqrt3`, `sqrt5`, `sqrt2/2`): `L` is `sqrt(q)`
//!   truncated to `m` binary places via an integer square root, `U = L + 2^-m`
//!   (or `U = L` when the root is exact).
//! * `e`: partial sum `S_K` of `1/k!` with `K` chosen so the tail bound
//!   `2/(K+1)!` is at most `2^-(m+2)`, then `S_K` and `S_K + 2/(K+1)!` are
//!   rounded outward to `m+2` binary places, giving width below `2^-m`.

use std::fmt;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use thiserror::Error;

use crate::enumeration::enumerate;
use crate::identifier::{IdentifierError, Selection, Selector};
use crate::rational::Rational;
use crate::tolerance::Tolerance;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RealsError {
    #[error("unknown real or presentation name `{0}`")]
    UnknownName(String),
    #[error("square root of a negative number in `{0}`")]
    NegativeRadicand(String),
    #[error("empty presentation list")]
    Empty,
}

/// A single computable real with built-in Cauchy bounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Real {
    Rational(Rational),
    Sqrt(Rational),
    E,
}

impl Real {
    /// Parses `sqrt2`, `sqrt3`, `sqrt5`, `sqrt2/2`, `e`, `rational:<q>` or
    /// `sqrt:<q>`.
    pub fn parse(name: &str) -> Result<Real, RealsError> {
        let name = name.trim();
        let unknown = || RealsError::UnknownName(name.to_string());
        let real = match name {
            "e" => Real::E,
            "sqrt2/2" => Real::Sqrt(Rational::from_i64s(1, 2)),
            _ => {
                if let Some(q) = name.strip_prefix("rational:") {
                    Real::Rational(q.trim().parse().map_err(|_| unknown())?)
                } else if let Some(q) = name.strip_prefix("sqrt:") {
                    Real::Sqrt(q.trim().parse().map_err(|_| unknown())?)
                } else if let Some(d) = name.strip_prefix("sqrt") {
                    let d: u32 = d.parse().map_err(|_| unknown())?;
                    Real::Sqrt(Rational::from(d as i64))
                } else {
                    return Err(unknown());
                }
            }
        };
        if let Real::Sqrt(q) = &real {
            if q.is_negative() {
                return Err(RealsError::NegativeRadicand(name.to_string()));
            }
        }
        Ok(real)
    }

    /// The exact value when the real is rational.
    pub fn as_rational(&self) -> Option<Rational> {
        match self {
            Real::Rational(q) => Some(q.clone()),
            Real::Sqrt(q) => {
                let n = q.numer().magnitude();
                let d = q.denom().magnitude();
                let (rn, rd) = (n.sqrt(), d.sqrt());
                if &(&rn * &rn) == n && &(&rd * &rd) == d {
                    Some(Rational::new(BigInt::from(rn), BigInt::from(rd)))
                } else {
                    None
                }
            }
            Real::E => None,
        }
    }

    /// Bounds `L <= x <= U` with `U - L <= 2^-m`, not necessarily nested.
    pub fn raw_bounds(&self, m: u64) -> (Rational, Rational) {
        match self {
            Real::Rational(q) => (q.clone(), q.clone()),
            Real::Sqrt(q) => sqrt_bounds(q, m),
            Real::E => e_bounds(m),
        }
    }

    pub fn approx_f64(&self) -> f64 {
        let (l, u) = self.raw_bounds(60);
        (l.to_f64() + u.to_f64()) / 2.0
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Real::Rational(q) => write!(f, "rational:{q}"),
            Real::Sqrt(q) if q.is_integer() => write!(f, "sqrt{}", q.numer()),
            Real::Sqrt(q) if *q == Rational::from_i64s(1, 2) => write!(f, "sqrt2/2"),
            Real::Sqrt(q) => write!(f, "sqrt:{q}"),
            Real::E => write!(f, "e"),
        }
    }
}

fn sqrt_bounds(q: &Rational, m: u64) -> (Rational, Rational) {
    if let Some(v) = Real::Sqrt(q.clone()).as_rational() {
        return (v.clone(), v);
    }
    // floor(sqrt(q) 2^m) = isqrt(floor(q 4^m))
    let s = q.floor_scaled(2 * m).magnitude().sqrt();
    let lo = Rational::dyadic(BigInt::from(s.clone()), m);
    let hi = Rational::dyadic(BigInt::from(s + 1u32), m);
    (lo, hi)
}

fn e_bounds(m: u64) -> (Rational, Rational) {
    // smallest K with (K+1)! >= 2^(m+3), so 2/(K+1)! <= 2^-(m+2)
    let target = BigUint::one() << (m + 3);
    let mut fact = BigUint::one();
    let mut k = 0u64;
    while fact < target {
        k += 1;
        fact *= k + 1;
    }
    // S_K = sum_{i<=K} K!/i! / K!
    let mut numer = BigUint::zero();
    let mut term = BigUint::one();
    for i in (0..=k).rev() {
        numer += &term;
        term *= i.max(1);
    }
    let k_fact = &fact / (k + 1);
    let s = Rational::new(BigInt::from(numer), BigInt::from(k_fact));
    let tail = Rational::new(BigInt::from(2u32), BigInt::from(fact));
    let bits = m + 2;
    let lo = Rational::dyadic(s.floor_scaled(bits), bits);
    let hi = Rational::dyadic((s + tail).ceil_scaled(bits), bits);
    (lo, hi)
}

/// A countable family `s_1, s_2, ...` with uniformly computable bounds.
#[allow(clippy::len_without_is_empty)]
pub trait CauchyPresentation: Send + Sync {
    fn name(&self) -> String;

    /// Number of members, or `None` for an infinite family.
    fn len(&self) -> Option<u64>;

    /// Bounds for member `j` at depth `m`, or `None` if `j` is out of range.
    fn raw_bounds(&self, j: u64, m: u64) -> Option<(Rational, Rational)>;
}

/// A finite list of built-in reals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Family {
    members: Vec<Real>,
}

impl Family {
    pub fn new(members: Vec<Real>) -> Self {
        Family { members }
    }

    pub fn members(&self) -> &[Real] {
        &self.members
    }
}

impl CauchyPresentation for Family {
    fn name(&self) -> String {
        self.members
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    fn len(&self) -> Option<u64> {
        Some(self.members.len() as u64)
    }

    fn raw_bounds(&self, j: u64, m: u64) -> Option<(Rational, Rational)> {
        let idx = usize::try_from(j.checked_sub(1)?).ok()?;
        Some(self.members.get(idx)?.raw_bounds(m))
    }
}

/// All of `Q` in enumeration order: `s_j = q_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RationalsFamily;

impl CauchyPresentation for RationalsFamily {
    fn name(&self) -> String {
        "rationals".to_string()
    }

    fn len(&self) -> Option<u64> {
        None
    }

    fn raw_bounds(&self, j: u64, _m: u64) -> Option<(Rational, Rational)> {
        let q = enumerate(j).ok()?;
        Some((q.clone(), q))
    }
}

/// Resolves a registry name: `rationals`, or a comma-separated list of
/// real names such as `sqrt2,sqrt3,rational:3/2,sqrt5`.
pub fn presentation(name: &str) -> Result<Arc<dyn CauchyPresentation>, RealsError> {
    let name = name.trim();
    if name == "rationals" {
        return Ok(Arc::new(RationalsFamily));
    }
    let members = name
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Real::parse)
        .collect::<Result<Vec<_>, _>>()?;
    if members.is_empty() {
        return Err(RealsError::Empty);
    }
    Ok(Arc::new(Family::new(members)))
}

/// Nested bounds: the intersection of the raw bounds at depths `1..=m`.
pub fn bounds(p: &dyn CauchyPresentation, j: u64, m: u64) -> Option<(Rational, Rational)> {
    let (mut lo, mut hi) = p.raw_bounds(j, m.max(1))?;
    for k in 1..m {
        let (l, u) = p.raw_bounds(j, k)?;
        lo = lo.max(l);
        hi = hi.min(u);
    }
    Some((lo, hi))
}

/// `In_n`: some depth `m <= n` certifies `x - delta < L(j,m)` and
/// `U(j,m) < x + delta`.
pub fn certified_in(
    p: &dyn CauchyPresentation,
    j: u64,
    x: &Rational,
    delta: &Rational,
    n: u64,
) -> bool {
    certified_in_tol(p, j, x, &Tolerance::exact(delta.clone()), n)
}

/// [`certified_in`] with a possibly symbolic radius.
pub fn certified_in_tol(
    p: &dyn CauchyPresentation,
    j: u64,
    x: &Rational,
    delta: &Tolerance,
    n: u64,
) -> bool {
    let mut current: Option<(Rational, Rational)> = None;
    for m in 1..=n {
        let Some((l, u)) = p.raw_bounds(j, m) else {
            return false;
        };
        let (l, u) = match current.take() {
            Some((pl, pu)) => (pl.max(l), pu.min(u)),
            None => (l, u),
        };
        if delta.exceeds(&(x - &l)) && delta.exceeds(&(&u - x)) {
            return true;
        }
        // s_j >= L >= x + delta or s_j <= U <= x - delta: never certifiable
        if !delta.exceeds(&(&l - x)) || !delta.exceeds(&(x - &u)) {
            return false;
        }
        current = Some((l, u));
    }
    false
}

/// The least `j <= k` with `In_n(j, x, delta)`, or 0 if there is none.
pub fn bounded_least_index(
    p: &dyn CauchyPresentation,
    k: u64,
    n: u64,
    x: &Rational,
    delta: &Rational,
) -> u64 {
    bounded_least_index_tol(p, k, n, x, &Tolerance::exact(delta.clone()))
}

pub fn bounded_least_index_tol(
    p: &dyn CauchyPresentation,
    k: u64,
    n: u64,
    x: &Rational,
    delta: &Tolerance,
) -> u64 {
    let k = p.len().map_or(k, |len| k.min(len));
    (1..=k)
        .find(|&j| certified_in_tol(p, j, x, delta, n))
        .unwrap_or(0)
}

/// Depth schedule for the general identifier.
///
/// `m(j) = j - 1`, so the first decision (where the inflated radius is a
/// full unit) certifies nothing.
pub fn depth_schedule(j: u64) -> u64 {
    j.saturating_sub(1)
}

/// Decision rule of the identifier over a presented family.
#[derive(Clone)]
pub struct CertifiedSelector {
    presentation: Arc<dyn CauchyPresentation>,
}

impl CertifiedSelector {
    pub fn new(presentation: Arc<dyn CauchyPresentation>) -> Self {
        CertifiedSelector { presentation }
    }

    pub fn presentation(&self) -> &dyn CauchyPresentation {
        self.presentation.as_ref()
    }
}

impl fmt::Debug for CertifiedSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CertifiedSelector({})", self.presentation.name())
    }
}

impl Selector for CertifiedSelector {
    fn select(
        &self,
        j: u64,
        mean: &Rational,
        threshold: &Tolerance,
        _budget: u64,
    ) -> Result<Selection, IdentifierError> {
        let c = bounded_least_index_tol(
            self.presentation.as_ref(),
            j,
            depth_schedule(j),
            mean,
            threshold,
        );
        Ok(Selection {
            candidate: c,
            output: c,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rational {
        s.parse().unwrap()
    }

    fn roots() -> Arc<dyn CauchyPresentation> {
        presentation("sqrt2,sqrt3,sqrt5").unwrap()
    }

    #[test]
    fn registry_names() {
        assert_eq!(Real::parse("sqrt2").unwrap(), Real::Sqrt(r("2")));
        assert_eq!(Real::parse("sqrt2/2").unwrap(), Real::Sqrt(r("1/2")));
        assert_eq!(
            Real::parse("rational:3/2").unwrap(),
            Real::Rational(r("3/2"))
        );
        assert_eq!(
            Real::parse("sqrt:9/4").unwrap().as_rational(),
            Some(r("3/2"))
        );
        assert!(Real::parse("pi").is_err());
        assert!(Real::parse("sqrt:-1").is_err());
        assert_eq!(roots().name(), "sqrt2,sqrt3,sqrt5");
        assert_eq!(presentation("rationals").unwrap().len(), None);
        assert!(presentation(" , ").is_err());
    }

    #[test]
    fn bounds_are_narrow_and_ordered() {
        for real in [
            Real::Sqrt(r("2")),
            Real::Sqrt(r("1/2")),
            Real::E,
            Real::Rational(r("-3/7")),
        ] {
            for m in 1..80 {
                let (l, u) = real.raw_bounds(m);
                assert!(l <= u);
                assert!(&u - &l <= Rational::pow2_neg(m), "{real} m={m}");
            }
        }
        let (l, u) = Real::Sqrt(r("9/4")).raw_bounds(5);
        assert_eq!((l, u), (r("3/2"), r("3/2")));
    }

    #[test]
    fn sqrt_bounds_bracket_by_squaring() {
        for d in [2i64, 3, 5, 7, 10] {
            let q = Rational::from(d);
            for m in [1u64, 7, 33, 200] {
                let (l, u) = Real::Sqrt(q.clone()).raw_bounds(m);
                assert!(l.square() <= q && q < u.square(), "sqrt{d} m={m}");
            }
        }
    }

    #[test]
    fn spec_examples_certified_in() {
        let p = presentation("sqrt2").unwrap();
        assert!(certified_in(p.as_ref(), 1, &r("3/2"), &r("1/10"), 7));
        for n in [0u64, 1, 5, 20, 60] {
            assert!(!certified_in(p.as_ref(), 1, &r("2"), &r("1/10"), n));
        }
        assert!(!certified_in(p.as_ref(), 1, &r("3/2"), &r("1/10"), 0));
    }

    #[test]
    fn spec_examples_bounded_least_index() {
        let s = roots();
        assert_eq!(
            bounded_least_index(s.as_ref(), 3, 20, &r("17/12"), &r("1/10")),
            1
        );
        for n in [0u64, 1, 3, 10, 40] {
            assert_eq!(
                bounded_least_index(s.as_ref(), 3, n, &r("7/4"), &r("1/100")),
                0
            );
        }
        assert_eq!(
            bounded_least_index(s.as_ref(), 3, 0, &r("17/12"), &r("1/10")),
            0
        );
    }

    #[test]
    fn nested_bounds_shrink() {
        let p = presentation("e").unwrap();
        let mut prev = bounds(p.as_ref(), 1, 1).unwrap();
        for m in 2..40 {
            let b = bounds(p.as_ref(), 1, m).unwrap();
            assert!(b.0 >= prev.0 && b.1 <= prev.1);
            prev = b;
        }
    }

    #[test]
    fn rationals_family_matches_enumeration() {
        let p = RationalsFamily;
        assert_eq!(p.raw_bounds(4, 3), Some((r("1/2"), r("1/2"))));
        assert_eq!(bounded_least_index(&p, 10, 1, &r("2/5"), &r("1/5")), 4);
    }
}
