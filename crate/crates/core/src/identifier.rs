//! Cover's sequential identifier over an enumerated class.
//!
//! At decision times `n(j) = j^p` the identifier computes the sample mean
//! and uncorrected variance of the readouts, the radius `delta^_n`, the
//! inflated threshold `delta'_n = delta^_n + eta_n`, and asks a [`Selector`]
//! for the new output. Between decision times the output is held.

use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enumeration::{QEnumeration, SmallRational};
use crate::precise::{self, sqrt_ceil};
use crate::rational::{ExactSum, Rational};
use crate::streams::ErrorSchedule;
use crate::tolerance::Tolerance;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentifierError {
    #[error("p must be an integer greater than 4, got {0}")]
    Exponent(u32),
    #[error("alpha must be positive, got {0}")]
    Alpha(Rational),
    #[error("depth budget must be at least 1")]
    Budget,
    #[error("negative sample variance {0}")]
    NegativeVariance(Rational),
    #[error("least-index radius must be positive")]
    NonPositiveRadius,
    #[error("least-index scan exceeded the depth budget of {budget} indices (mean {mean}, radius {radius})")]
    DepthExceeded {
        budget: u64,
        mean: Rational,
        radius: String,
    },
}

fn default_alpha() -> Rational {
    Rational::from_i64s(1, 2)
}

fn default_p() -> u32 {
    6
}

fn default_budget() -> u64 {
    10_000_000
}

/// Tuning of the identifier. Schedules are `n(j) = j^p` and `k_j = j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifierConfig {
    #[serde(default = "default_alpha")]
    pub alpha: Rational,
    #[serde(default = "default_p")]
    pub p: u32,
    #[serde(default)]
    pub epsilon: ErrorSchedule,
    /// Caps the radius over-approximation precision at `2^-slack_cap`
    /// instead of `2^-n`. Unset means the full `2^-n` contract.
    #[serde(default)]
    pub slack_cap: Option<u64>,
    /// Maximum number of indices a least-index scan may inspect.
    #[serde(default = "default_budget")]
    pub depth_budget: u64,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        IdentifierConfig {
            alpha: default_alpha(),
            p: default_p(),
            epsilon: ErrorSchedule::default(),
            slack_cap: None,
            depth_budget: default_budget(),
        }
    }
}

impl IdentifierConfig {
    pub fn validate(&self) -> Result<(), IdentifierError> {
        if self.p <= 4 {
            return Err(IdentifierError::Exponent(self.p));
        }
        if !self.alpha.is_positive() {
            return Err(IdentifierError::Alpha(self.alpha.clone()));
        }
        if self.depth_budget == 0 {
            return Err(IdentifierError::Budget);
        }
        Ok(())
    }

    /// `n(j) = j^p`, or `None` past `u64`.
    pub fn decision_time(&self, j: u64) -> Option<u64> {
        j.checked_pow(self.p)
    }

    /// `n(j)` without the `u64` limit, for diagnostics.
    pub fn decision_time_wide(&self, j: u64) -> Option<u128> {
        (j as u128).checked_pow(self.p)
    }

    /// `k_j = j`.
    pub fn candidate_bound(&self, j: u64) -> u64 {
        j
    }

    /// Precision exponent of the radius over-approximation at sample size `n`.
    pub fn slack_bits(&self, n: u128) -> u64 {
        let n = u64::try_from(n).unwrap_or(u64::MAX);
        self.slack_cap.map_or(n, |c| c.min(n))
    }
}

/// Exact running sums of the readouts and their squares.
#[derive(Clone, Debug, Default)]
pub struct RunningStats {
    n: u64,
    sum: ExactSum,
    sum_sq: ExactSum,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: &Rational) {
        self.push_repeated(x, 1);
    }

    pub fn push_repeated(&mut self, x: &Rational, count: u64) {
        if count == 0 {
            return;
        }
        self.n += count;
        self.sum.add_scaled(x, count);
        self.sum_sq.add_scaled(&x.square(), count);
    }

    /// Like [`push`](Self::push) with `x_sq = x * x` supplied by the caller.
    pub fn push_with_square(&mut self, x: &Rational, x_sq: &Rational) {
        self.n += 1;
        self.sum.add(x);
        self.sum_sq.add(x_sq);
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn sum(&self) -> Rational {
        self.sum.value()
    }

    pub fn sum_sq(&self) -> Rational {
        self.sum_sq.value()
    }

    pub fn mean(&self) -> Option<Rational> {
        (self.n > 0).then(|| self.sum.div_int(self.n))
    }

    /// Uncorrected variance `sum_sq/n - mean^2`.
    pub fn variance(&self) -> Option<Rational> {
        let mean = self.mean()?;
        Some(self.sum_sq.div_int(self.n) - mean.square())
    }
}

/// The radius `delta^_n` with slack `2^-n`, or `2^-slack_cap` if configured.
pub fn radius(
    n: u128,
    s_sq: &Rational,
    cfg: &IdentifierConfig,
) -> Result<Tolerance, IdentifierError> {
    radius_with_slack(n, s_sq, &cfg.alpha, cfg.slack_bits(n))
}

/// A rational `delta^` with `delta_n <= delta^ <= delta_n + 2^-slack` where
/// `delta_n = max((1+alpha) sqrt(2 s^2 loglog(n) / n), 2^-n)`.
pub fn radius_with_slack(
    n: u128,
    s_sq: &Rational,
    alpha: &Rational,
    slack: u64,
) -> Result<Tolerance, IdentifierError> {
    assert!(n >= 1, "radius needs n >= 1");
    if s_sq.is_negative() {
        return Err(IdentifierError::NegativeVariance(s_sq.clone()));
    }
    let floor = Tolerance::pow2(n);
    if n <= 3 || s_sq.is_zero() {
        return Ok(floor);
    }
    let one_plus = Rational::one() + alpha;
    // delta^2 = c * loglog(n)
    let c = (one_plus.square() * s_sq)
        .mul_int(2)
        .div_int(BigInt::from(n));
    let q = slack + 2;
    let extra = c.log2_estimate().max(0) as u64;
    let mut w = (slack + 128 + extra).div_ceil(64) * 64;
    let (cn, cd) = (c.numer(), c.denom());
    let dhi = loop {
        let ll = precise::loglog(n, w);
        let den = cd << w;
        let lo = ((cn * &ll.lo) << (2 * q)) / &den;
        let hi = -((-((cn * &ll.hi) << (2 * q))).div_floor(&den));
        let dlo = lo.magnitude().sqrt();
        let dhi = sqrt_ceil(hi.magnitude());
        // dlo <= delta * 2^q <= dhi, so dhi is within 2^-slack of delta
        if &dhi - &dlo <= BigUint::from(4u32) {
            break dhi;
        }
        w *= 2;
    };
    // return max(dhi / 2^q, 2^-n)
    let below_floor = if n >= q as u128 {
        dhi.bits() == 0
    } else {
        dhi < BigUint::one() << (q - n as u64)
    };
    if below_floor {
        Ok(floor)
    } else {
        Ok(Tolerance::exact(Rational::dyadic(BigInt::from(dhi), q)))
    }
}

/// One decision of an identifier run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DecisionRecord {
    pub j: u64,
    pub n: u64,
    pub mean: Rational,
    pub s_sq: Rational,
    pub radius: Tolerance,
    pub threshold: Tolerance,
    pub candidate: u64,
    pub output: u64,
}

/// Result of a decision: the searched index and the emitted output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub candidate: u64,
    pub output: u64,
}

/// Picks the output at decision `j` from the mean and inflated threshold.
pub trait Selector {
    fn select(
        &self,
        j: u64,
        mean: &Rational,
        threshold: &Tolerance,
        budget: u64,
    ) -> Result<Selection, IdentifierError>;
}

impl<T: Selector + ?Sized> Selector for Box<T> {
    fn select(
        &self,
        j: u64,
        mean: &Rational,
        threshold: &Tolerance,
        budget: u64,
    ) -> Result<Selection, IdentifierError> {
        (**self).select(j, mean, threshold, budget)
    }
}

/// A selector chosen at run time.
pub type DynSelector = Box<dyn Selector + Send + Sync>;

/// The rule over `Q`: `i_j` is the least index within the threshold, and the
/// output is `i_j` if `i_j <= k_j`, else 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EnumerationSelector;

impl Selector for EnumerationSelector {
    fn select(
        &self,
        j: u64,
        mean: &Rational,
        threshold: &Tolerance,
        budget: u64,
    ) -> Result<Selection, IdentifierError> {
        let i = least_index_tol(mean, threshold, budget)?;
        Ok(Selection {
            candidate: i,
            output: if i <= j { i } else { 0 },
        })
    }
}

fn cmp_small(q: &SmallRational, x: &Rational) -> std::cmp::Ordering {
    let mut n = BigInt::from(q.numer);
    if q.negative {
        n = -n;
    }
    (n * x.denom()).cmp(&(x.numer() * BigInt::from(q.denom)))
}

/// `min { i >= 1 : |q_i - t| < delta }`.
pub fn least_index(t: &Rational, delta: &Rational) -> Result<u64, IdentifierError> {
    least_index_tol(t, &Tolerance::exact(delta.clone()), default_budget())
}

/// [`least_index`] with a possibly symbolic radius and an explicit budget.
pub fn least_index_tol(
    t: &Rational,
    delta: &Tolerance,
    budget: u64,
) -> Result<u64, IdentifierError> {
    if !delta.is_positive() {
        return Err(IdentifierError::NonPositiveRadius);
    }
    let hit: Box<dyn Fn(&SmallRational) -> bool> = match delta {
        Tolerance::Exact(d) => {
            let lo = t - d;
            let hi = t + d;
            Box::new(move |q| {
                cmp_small(q, &lo) == std::cmp::Ordering::Greater
                    && cmp_small(q, &hi) == std::cmp::Ordering::Less
            })
        }
        Tolerance::Dyadic { .. } => {
            let delta = delta.clone();
            let t = t.clone();
            Box::new(move |q| delta.exceeds(&(q.to_rational() - &t).abs()))
        }
    };
    for (i, q) in QEnumeration::new().take(usize::try_from(budget).unwrap_or(usize::MAX)) {
        if hit(&q) {
            return Ok(i);
        }
    }
    Err(IdentifierError::DepthExceeded {
        budget,
        mean: t.clone(),
        radius: delta.to_string(),
    })
}

/// Sequential identifier with the hold rule between decision times.
#[derive(Clone)]
pub struct SequentialIdentifier<S> {
    config: IdentifierConfig,
    selector: S,
    stats: RunningStats,
    decisions: u64,
    next_decision: Option<u64>,
    output: u64,
    trace: Option<Vec<DecisionRecord>>,
}

/// The identifier over `Q` under the fixed enumeration.
pub type RationalIdentifier = SequentialIdentifier<EnumerationSelector>;

impl RationalIdentifier {
    pub fn rational(config: IdentifierConfig) -> Result<Self, IdentifierError> {
        Self::new(config, EnumerationSelector)
    }
}

impl<S: Selector> SequentialIdentifier<S> {
    pub fn new(config: IdentifierConfig, selector: S) -> Result<Self, IdentifierError> {
        config.validate()?;
        let next_decision = config.decision_time(1);
        Ok(SequentialIdentifier {
            config,
            selector,
            stats: RunningStats::new(),
            decisions: 0,
            next_decision,
            output: 0,
            trace: None,
        })
    }

    /// Keeps a [`DecisionRecord`] for every decision time.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &IdentifierConfig {
        &self.config
    }

    pub fn selector(&self) -> &S {
        &self.selector
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    /// Current output `C_n`: 0, or an index.
    pub fn output(&self) -> u64 {
        self.output
    }

    pub fn samples_seen(&self) -> u64 {
        self.stats.n()
    }

    /// Number of decisions taken so far.
    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn next_decision_time(&self) -> Option<u64> {
        self.next_decision
    }

    pub fn trace(&self) -> Option<&[DecisionRecord]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<DecisionRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Feeds one readout and returns `C_n`.
    pub fn observe(&mut self, x: &Rational) -> Result<u64, IdentifierError> {
        self.stats.push(x);
        if Some(self.stats.n()) == self.next_decision {
            self.decide()?;
        }
        Ok(self.output)
    }

    /// Like [`observe`](Self::observe) with the square of `x` precomputed.
    pub fn observe_with_square(
        &mut self,
        x: &Rational,
        x_sq: &Rational,
    ) -> Result<u64, IdentifierError> {
        self.stats.push_with_square(x, x_sq);
        if Some(self.stats.n()) == self.next_decision {
            self.decide()?;
        }
        Ok(self.output)
    }

    /// Feeds `count` copies of `x`, taking every decision on the way.
    pub fn observe_repeated(&mut self, x: &Rational, count: u64) -> Result<u64, IdentifierError> {
        let mut remaining = count;
        while remaining > 0 {
            let n = self.stats.n();
            let step = match self.next_decision {
                Some(nd) if nd - n <= remaining => nd - n,
                _ => remaining,
            };
            self.stats.push_repeated(x, step);
            remaining -= step;
            if Some(self.stats.n()) == self.next_decision {
                self.decide()?;
            }
        }
        Ok(self.output)
    }

    fn decide(&mut self) -> Result<(), IdentifierError> {
        let j = self.decisions + 1;
        let n = self.stats.n();
        let mean = self.stats.mean().expect("decisions happen after samples");
        let s_sq = self
            .stats
            .variance()
            .expect("decisions happen after samples");
        let radius = radius(n as u128, &s_sq, &self.config)?;
        let eta = self.config.epsilon.eta(n as u128);
        let threshold = radius
            .add(&eta)
            .expect("radius and eta share the 2^-n term");
        let sel = self
            .selector
            .select(j, &mean, &threshold, self.config.depth_budget)?;
        self.output = sel.output;
        self.decisions = j;
        self.next_decision = self.config.decision_time(j + 1);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(DecisionRecord {
                j,
                n,
                mean,
                s_sq,
                radius,
                threshold,
                candidate: sel.candidate,
                output: sel.output,
            });
        }
        Ok(())
    }
}

impl<S: fmt::Debug> fmt::Debug for SequentialIdentifier<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SequentialIdentifier")
            .field("selector", &self.selector)
            .field("n", &self.stats.n())
            .field("decisions", &self.decisions)
            .field("output", &self.output)
            .finish()
    }
}
