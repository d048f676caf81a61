//! Seeded i.i.d. sample streams delivered as exact rational readouts.
//!
//! # Generator
//!
//! Randomness comes from SplitMix64: draw `k` (0-based) of a stream with
//! seed `s` is `mix(s + (k + 1) * 0x9E3779B97F4A7C15)` (wrapping), where
//! `mix` is `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//! z *= 0x94D049BB133111EB; z ^= z >> 31`.
//!
//! A Bernoulli(`p`) coin compares a uniform `U` in `[0, 1)` with `p`, reading
//! `U` 64 bits at a time (most significant chunk first) until the comparison
//! is decided. The coin is true iff `U < p`.
//!
//! # Sample kinds
//!
//! * `constant(q)`: always `q`; no draws.
//! * `two_point(a, b, p)`: `a` if the `p`-coin is true, else `b`.
//! * `shifted_bernoulli(q, delta)`: `q + delta/2` if a 1/2-coin is true,
//!   else `q - delta/2`.
//! * `irrational_two_point(mu, offset)`: `r_i + offset` if a 1/2-coin is true,
//!   else `r_i - offset`, where `r_i = floor(mu * 2^t) / 2^t` and `t` is the
//!   smallest bit count with `2^-t <= eps_i`.

use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::precise::floor_shr;
use crate::rational::Rational;
use crate::reals::{Real, RealsError};
use crate::tolerance::Tolerance;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("probability {0} is not strictly between 0 and 1")]
    Probability(Rational),
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    #[error("mean presentation: {0}")]
    Presentation(#[from] RealsError),
    #[error("mean `{0}` is rational; use a rational-support kind")]
    RationalMean(String),
}

/// Per-sample readout error schedule `eps_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorSchedule {
    /// `eps_i = 2^-i`.
    #[default]
    Pow2,
    /// `eps_i = 1/i^2`.
    InverseSquare,
}

/// Largest `n` for which the inverse-square mean bound is summed exactly.
pub const EXACT_ETA_LIMIT: u64 = 4096;

impl ErrorSchedule {
    pub fn epsilon(&self, i: u64) -> Rational {
        match self {
            ErrorSchedule::Pow2 => Rational::pow2_neg(i),
            ErrorSchedule::InverseSquare => {
                Rational::from_integer(1).div_int(BigInt::from(i) * BigInt::from(i))
            }
        }
    }

    /// Smallest `t` with `2^-t <= eps_i`.
    pub fn readout_bits(&self, i: u64) -> u64 {
        match self {
            ErrorSchedule::Pow2 => i,
            ErrorSchedule::InverseSquare => {
                // 2^-t <= 1/i^2  iff  i^2 <= 2^t
                let sq = i as u128 * i as u128;
                128 - (sq - 1).leading_zeros() as u64
            }
        }
    }

    /// The mean bound `eta_n = (1/n) sum_{i<=n} eps_i`, or an upper bound
    /// for inverse-square schedules beyond [`EXACT_ETA_LIMIT`].
    pub fn eta(&self, n: u128) -> Tolerance {
        assert!(n >= 1, "eta needs n >= 1");
        let inv_n = Rational::one().div_int(BigInt::from(n));
        match self {
            ErrorSchedule::Pow2 => Tolerance::dyadic(inv_n.clone(), -inv_n, n),
            ErrorSchedule::InverseSquare => {
                if n <= EXACT_ETA_LIMIT as u128 {
                    let s: Rational = (1..=n as u64).map(|i| self.epsilon(i)).sum();
                    Tolerance::exact(s * inv_n)
                } else {
                    // sum_{i<=n} 1/i^2 < 2 - 1/n
                    Tolerance::exact((Rational::from(2i64) - &inv_n) * inv_n)
                }
            }
        }
    }
}

/// `eta_n = (1 - 2^-n)/n` for the default schedule `eps_i = 2^-i`.
pub fn eta(n: u64) -> Rational {
    assert!(n >= 1, "eta needs n >= 1");
    (Rational::one() - Rational::pow2_neg(n)).div_int(n)
}

/// SplitMix64 as a counter-based generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    seed: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { seed, counter: 0 }
    }

    /// Draw number `counter` (0-based) of the stream with this seed.
    pub fn at(seed: u64, counter: u64) -> u64 {
        mix(seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = Self::at(self.seed, self.counter);
        self.counter += 1;
        v
    }

    pub fn draws(&self) -> u64 {
        self.counter
    }
}

/// A coin with rational bias, precomputed for its first 64-bit chunk.
#[derive(Clone, Debug)]
struct Coin {
    p: Rational,
    // floor(p 2^64) and whether p 2^64 is an integer
    first: u128,
    first_exact: bool,
}

impl Coin {
    fn new(p: Rational) -> Self {
        let f = p.floor_scaled(64);
        let first_exact = p.ceil_scaled(64) == f;
        let first = f.to_u128().expect("probability in [0, 1]");
        Coin {
            p,
            first,
            first_exact,
        }
    }

    fn flip(&self, rng: &mut SplitMix64) -> bool {
        let u = rng.next_u64() as u128;
        if u != self.first {
            return u < self.first;
        }
        if self.first_exact {
            return false;
        }
        let mut acc = BigUint::from(u as u64);
        let mut bits = 64u64;
        loop {
            bits += 64;
            acc = (acc << 64usize) + BigUint::from(rng.next_u64());
            let f = self.p.floor_scaled(bits);
            let f = f.magnitude();
            if &acc != f {
                return &acc < f;
            }
            if self.p.ceil_scaled(bits).magnitude() == f {
                return false;
            }
        }
    }
}

/// Distribution of the conceptual true samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Constant {
        q: Rational,
    },
    TwoPoint {
        a: Rational,
        b: Rational,
        p: Rational,
    },
    ShiftedBernoulli {
        q: Rational,
        delta: Rational,
    },
    IrrationalTwoPoint {
        mu: String,
        offset: Rational,
    },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<(), StreamError> {
        match self {
            DistributionSpec::Constant { .. } => Ok(()),
            DistributionSpec::TwoPoint { a, b, p } => {
                if !p.is_positive() || *p >= Rational::one() {
                    return Err(StreamError::Probability(p.clone()));
                }
                if a == b {
                    return Err(StreamError::Degenerate(self.label()));
                }
                Ok(())
            }
            DistributionSpec::ShiftedBernoulli { delta, .. } => {
                if delta.is_zero() {
                    return Err(StreamError::Degenerate(self.label()));
                }
                Ok(())
            }
            DistributionSpec::IrrationalTwoPoint { mu, offset } => {
                let real = Real::parse(mu)?;
                if real.as_rational().is_some() {
                    return Err(StreamError::RationalMean(mu.clone()));
                }
                if offset.is_zero() {
                    return Err(StreamError::Degenerate(self.label()));
                }
                Ok(())
            }
        }
    }

    /// Exact mean, when it is rational.
    pub fn mean(&self) -> Option<Rational> {
        match self {
            DistributionSpec::Constant { q } => Some(q.clone()),
            DistributionSpec::TwoPoint { a, b, p } => Some(p * a + (Rational::one() - p) * b),
            DistributionSpec::ShiftedBernoulli { q, .. } => Some(q.clone()),
            DistributionSpec::IrrationalTwoPoint { .. } => None,
        }
    }

    /// Exact variance of the true samples.
    pub fn variance(&self) -> Rational {
        match self {
            DistributionSpec::Constant { .. } => Rational::zero(),
            DistributionSpec::TwoPoint { a, b, p } => p * (Rational::one() - p) * (a - b).square(),
            DistributionSpec::ShiftedBernoulli { delta, .. } => delta.div_int(2).square(),
            DistributionSpec::IrrationalTwoPoint { offset, .. } => offset.square(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.variance().is_zero()
    }

    pub fn has_rational_support(&self) -> bool {
        !matches!(self, DistributionSpec::IrrationalTwoPoint { .. })
    }

    /// Compact label used in result files, e.g. `two_point(0/1,1/1,1/2)`.
    pub fn label(&self) -> String {
        match self {
            DistributionSpec::Constant { q } => format!("constant({q})"),
            DistributionSpec::TwoPoint { a, b, p } => format!("two_point({a},{b},{p})"),
            DistributionSpec::ShiftedBernoulli { q, delta } => {
                format!("shifted_bernoulli({q},{delta})")
            }
            DistributionSpec::IrrationalTwoPoint { mu, offset } => {
                format!("irrational_two_point({mu},{offset})")
            }
        }
    }

    /// The mean as written in result files: exact `num/den`, or the
    /// presentation name for irrational means.
    pub fn mean_label(&self) -> String {
        match (self.mean(), self) {
            (Some(m), _) => m.to_string(),
            (None, DistributionSpec::IrrationalTwoPoint { mu, .. }) => mu.clone(),
            (None, _) => unreachable!("only irrational kinds lack a rational mean"),
        }
    }
}

/// Cached binary digits of an irrational mean.
#[derive(Clone, Debug)]
struct MeanDigits {
    real: Arc<Real>,
    // floor and ceil of mu * 2^bits
    lo: BigInt,
    hi: BigInt,
    bits: u64,
}

impl MeanDigits {
    fn new(real: Real) -> Self {
        MeanDigits {
            real: Arc::new(real),
            lo: BigInt::zero(),
            hi: BigInt::zero(),
            bits: 0,
        }
    }

    fn refine(&mut self, bits: u64) {
        let (l, u) = self.real.raw_bounds(bits);
        self.lo = l.floor_scaled(bits);
        self.hi = u.ceil_scaled(bits);
        self.bits = bits;
    }

    /// `floor(mu * 2^t)`.
    fn floor_scaled(&mut self, t: u64) -> BigInt {
        loop {
            if self.bits >= t + 16 {
                let s = self.bits - t;
                let a = floor_shr(&self.lo, s);
                if a == floor_shr(&self.hi, s) {
                    return a;
                }
            }
            let want = (2 * self.bits).max(t + 64).max(256);
            self.refine(want);
        }
    }
}

#[derive(Clone, Debug)]
enum Sampler {
    Constant(Rational),
    TwoPoint {
        a: Rational,
        b: Rational,
        coin: Coin,
    },
    Symmetric {
        center: Rational,
        half: Rational,
    },
    Irrational {
        digits: MeanDigits,
        offset: Rational,
        last: Option<Truncation>,
    },
}

/// `floor(mu * 2^t)` and its square, carried forward so the next square is
/// a linear-time update instead of a full multiplication.
#[derive(Clone, Debug)]
struct Truncation {
    t: u64,
    f: BigInt,
    f_sq: BigInt,
}

impl Truncation {
    fn advance(prev: Option<&Truncation>, t: u64, f: BigInt) -> Truncation {
        let f_sq = match prev {
            Some(p) if p.t <= t => {
                let s = t - p.t;
                let d = &f - (&p.f << s);
                if d.bits() <= 64 {
                    (&p.f_sq << (2 * s)) + ((&p.f * &d) << (s + 1)) + &d * &d
                } else {
                    &f * &f
                }
            }
            _ => &f * &f,
        };
        Truncation { t, f, f_sq }
    }
}

/// Seeded generator of readouts `X~_1, X~_2, ...` with `|X~_i - X_i| <= eps_i`.
///
/// Rational-support kinds are sampled exactly, so their readout error is 0.
#[derive(Clone, Debug)]
pub struct ReadoutStream {
    spec: DistributionSpec,
    seed: u64,
    schedule: ErrorSchedule,
    rng: SplitMix64,
    sampler: Sampler,
    position: u64,
}

impl ReadoutStream {
    pub fn new(
        spec: DistributionSpec,
        seed: u64,
        schedule: ErrorSchedule,
    ) -> Result<Self, StreamError> {
        spec.validate()?;
        let sampler = match &spec {
            DistributionSpec::Constant { q } => Sampler::Constant(q.clone()),
            DistributionSpec::TwoPoint { a, b, p } => Sampler::TwoPoint {
                a: a.clone(),
                b: b.clone(),
                coin: Coin::new(p.clone()),
            },
            DistributionSpec::ShiftedBernoulli { q, delta } => Sampler::Symmetric {
                center: q.clone(),
                half: delta.div_int(2),
            },
            DistributionSpec::IrrationalTwoPoint { mu, offset } => Sampler::Irrational {
                digits: MeanDigits::new(Real::parse(mu)?),
                offset: offset.clone(),
                last: None,
            },
        };
        Ok(ReadoutStream {
            spec,
            seed,
            schedule,
            rng: SplitMix64::new(seed),
            sampler,
            position: 0,
        })
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn schedule(&self) -> ErrorSchedule {
        self.schedule
    }

    /// Number of readouts delivered so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// The value of a degenerate stream.
    pub fn constant_value(&self) -> Option<&Rational> {
        match &self.sampler {
            Sampler::Constant(q) => Some(q),
            _ => None,
        }
    }

    /// Certified bound on `|X~_i - X_i|` for the readout at position `i`.
    pub fn readout_error_bound(&self, i: u64) -> Rational {
        match &self.sampler {
            Sampler::Irrational { .. } => self.schedule.epsilon(i),
            _ => Rational::zero(),
        }
    }

    pub fn next_readout(&mut self) -> Rational {
        self.next_pair(false).0
    }

    /// The next readout together with its square.
    ///
    /// For irrational means the square is built incrementally from the
    /// previous truncation, which keeps long runs from being dominated by
    /// multiplying readouts of ever-growing length.
    pub fn next_readout_with_square(&mut self) -> (Rational, Rational) {
        let (x, sq) = self.next_pair(true);
        let sq = sq.unwrap_or_else(|| x.square());
        (x, sq)
    }

    fn next_pair(&mut self, want_square: bool) -> (Rational, Option<Rational>) {
        self.position += 1;
        let i = self.position;
        match &mut self.sampler {
            Sampler::Constant(q) => (q.clone(), None),
            Sampler::TwoPoint { a, b, coin } => {
                if coin.flip(&mut self.rng) {
                    (a.clone(), None)
                } else {
                    (b.clone(), None)
                }
            }
            Sampler::Symmetric { center, half } => {
                if half_coin(&mut self.rng) {
                    (&*center + &*half, None)
                } else {
                    (&*center - &*half, None)
                }
            }
            Sampler::Irrational {
                digits,
                offset,
                last,
            } => {
                let t = self.schedule.readout_bits(i);
                let f = digits.floor_scaled(t);
                let up = half_coin(&mut self.rng);
                if !want_square {
                    let r = Rational::dyadic(f, t);
                    return (if up { r + &*offset } else { r - &*offset }, None);
                }
                let tr = Truncation::advance(last.as_ref(), t, f);
                // x = (f*b +- a*2^t) / (b*2^t) with offset = a/b.
                let a = if up {
                    offset.numer().clone()
                } else {
                    -offset.numer()
                };
                let b = offset.denom();
                let a_shift = &a << t;
                let numer = &tr.f * b + &a_shift;
                let sq_numer =
                    (&tr.f_sq * (b * b)) + ((&tr.f * (&a * b)) << (t + 1)) + ((&a * &a) << (2 * t));
                let denom = b << t;
                let sq_denom = (b * b) << (2 * t);
                *last = Some(tr);
                (
                    Rational::new(numer, denom),
                    Some(Rational::new(sq_numer, sq_denom)),
                )
            }
        }
    }
}

impl Iterator for ReadoutStream {
    type Item = Rational;

    fn next(&mut self) -> Option<Rational> {
        Some(self.next_readout())
    }
}

fn half_coin(rng: &mut SplitMix64) -> bool {
    rng.next_u64() < 1 << 63
}

/// The degenerate stream `q, q, q, ...`.
pub fn constant_stream(q: Rational) -> ReadoutStream {
    ReadoutStream::new(DistributionSpec::Constant { q }, 0, ErrorSchedule::Pow2)
        .expect("constant specs are always valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn eta_values() {
        assert_eq!(eta(1), r("1/2"));
        assert_eq!(eta(3), r("7/24"));
        assert_eq!(eta(10), r("1023/10240"));
        assert_eq!(
            ErrorSchedule::Pow2.eta(10),
            Tolerance::exact(r("1023/10240"))
        );
        let s = ErrorSchedule::InverseSquare;
        assert_eq!(s.eta(2), Tolerance::exact(r("5/8")));
    }

    #[test]
    fn readout_bits_cover_epsilon() {
        for s in [ErrorSchedule::Pow2, ErrorSchedule::InverseSquare] {
            for i in 1..2000u64 {
                let t = s.readout_bits(i);
                assert!(Rational::pow2_neg(t) <= s.epsilon(i));
                if t > 0 {
                    assert!(Rational::pow2_neg(t - 1) > s.epsilon(i), "{s:?} i={i}");
                }
            }
        }
    }

    #[test]
    fn splitmix_reference_values() {
        // reference SplitMix64 stream for seed 0
        let mut g = SplitMix64::new(0);
        assert_eq!(g.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(g.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn constant_streams() {
        for q in ["0", "3/7", "-5/3"] {
            let s = constant_stream(r(q));
            assert!(s.take(100).all(|x| x == r(q)));
        }
    }

    #[test]
    fn two_point_seed_42_fixture() {
        let spec = DistributionSpec::TwoPoint {
            a: r("0"),
            b: r("1"),
            p: r("1/2"),
        };
        let got: Vec<Rational> = ReadoutStream::new(spec, 42, ErrorSchedule::Pow2)
            .unwrap()
            .take(12)
            .collect();
        // a = 0 when the draw is below 2^63
        let want: Vec<Rational> = [1, 0, 0, 0, 0, 1, 0, 1, 0, 1, 0, 0]
            .iter()
            .map(|&v| Rational::from(v as i64))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn same_seed_same_prefix() {
        let spec = DistributionSpec::TwoPoint {
            a: r("0"),
            b: r("1"),
            p: r("1/3"),
        };
        let a: Vec<_> = ReadoutStream::new(spec.clone(), 9, ErrorSchedule::Pow2)
            .unwrap()
            .take(500)
            .collect();
        let b: Vec<_> = ReadoutStream::new(spec, 9, ErrorSchedule::Pow2)
            .unwrap()
            .take(500)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn coin_with_dyadic_and_odd_biases() {
        let mut rng = SplitMix64::new(5);
        let half = Coin::new(r("1/2"));
        let third = Coin::new(r("1/3"));
        let n = 20_000;
        let h = (0..n).filter(|_| half.flip(&mut rng)).count() as f64 / n as f64;
        let t = (0..n).filter(|_| third.flip(&mut rng)).count() as f64 / n as f64;
        assert!((h - 0.5).abs() < 0.02);
        assert!((t - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn spec_validation() {
        let bad = DistributionSpec::TwoPoint {
            a: r("0"),
            b: r("1"),
            p: r("1"),
        };
        assert!(bad.validate().is_err());
        let degenerate = DistributionSpec::TwoPoint {
            a: r("2"),
            b: r("2"),
            p: r("1/2"),
        };
        assert!(degenerate.validate().is_err());
        let rational_mu = DistributionSpec::IrrationalTwoPoint {
            mu: "sqrt:4".into(),
            offset: r("1"),
        };
        assert!(rational_mu.validate().is_err());
        let two = DistributionSpec::TwoPoint {
            a: r("0"),
            b: r("1"),
            p: r("1/4"),
        };
        assert_eq!(two.mean(), Some(r("3/4")));
        assert_eq!(two.variance(), r("3/16"));
    }

    #[test]
    fn irrational_readouts_are_certified() {
        let spec = DistributionSpec::IrrationalTwoPoint {
            mu: "sqrt2".into(),
            offset: r("1"),
        };
        let mut s = ReadoutStream::new(spec, 3, ErrorSchedule::Pow2).unwrap();
        let real = Real::Sqrt(r("2"));
        for i in 1..=300u64 {
            let x = s.next_readout();
            // r_i + 1 > 2 > r_i - 1 + 1, so the sign of the shift is visible
            let rounded = if x > r("1") {
                &x - Rational::one()
            } else {
                &x + Rational::one()
            };
            let (l, u) = real.raw_bounds(i + 8);
            let eps = Rational::pow2_neg(i);
            assert!(rounded <= l, "i={i}");
            assert!(&u - &rounded <= eps);
        }
    }

    #[test]
    fn incremental_squares_match() {
        for (mu, off, sched) in [
            ("sqrt2/2", "1", ErrorSchedule::Pow2),
            ("sqrt3", "3/5", ErrorSchedule::InverseSquare),
            ("e", "-7/2", ErrorSchedule::Pow2),
        ] {
            let spec = DistributionSpec::IrrationalTwoPoint {
                mu: mu.into(),
                offset: r(off),
            };
            let mut plain = ReadoutStream::new(spec.clone(), 11, sched).unwrap();
            let mut paired = ReadoutStream::new(spec, 11, sched).unwrap();
            for i in 1..=400 {
                let x = plain.next_readout();
                let (y, y_sq) = paired.next_readout_with_square();
                assert_eq!(x, y, "{mu} i={i}");
                assert_eq!(y_sq, x.square(), "{mu} i={i}");
            }
        }
    }
}
