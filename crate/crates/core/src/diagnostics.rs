//! Numerical checks behind the correctness argument: the measure bound for
//! unions of intervals around enumerated rationals, partial sums of the
//! summability conditions, and empirical LIL coverage.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::enumeration::QEnumeration;
use crate::identifier::{radius_with_slack, IdentifierConfig, IdentifierError, RunningStats};
use crate::precise::compare_loglog;
use crate::rational::{ExactSum, Rational};
use crate::streams::{DistributionSpec, ErrorSchedule, ReadoutStream, StreamError};
use crate::tolerance::Tolerance;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiagnosticsError {
    #[error("lil coverage needs a nondegenerate distribution")]
    Degenerate,
    #[error("lil coverage needs an exactly known rational mean")]
    IrrationalMean,
    #[error("decision time n({0}) does not fit in 128 bits")]
    Overflow(u64),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Identifier(#[from] IdentifierError),
}

/// Measure of a union of open intervals, maintained incrementally.
#[derive(Clone, Debug, Default)]
pub struct IntervalUnion {
    // left end -> right end of disjoint merged intervals
    parts: BTreeMap<Rational, Rational>,
    measure: Rational,
}

impl IntervalUnion {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the interval `(lo, hi)`.
    pub fn insert(&mut self, mut lo: Rational, mut hi: Rational) {
        if hi <= lo {
            return;
        }
        if let Some((l, r)) = self.parts.range(..=&lo).next_back() {
            if *r >= lo {
                lo = l.clone();
                if *r > hi {
                    hi = r.clone();
                }
            }
        }
        let absorbed: Vec<Rational> = self
            .parts
            .range(&lo..=&hi)
            .map(|(l, _)| l.clone())
            .collect();
        for l in absorbed {
            let r = self.parts.remove(&l).expect("key from range");
            self.measure = &self.measure - (&r - &l);
            if r > hi {
                hi = r;
            }
        }
        self.measure = &self.measure + (&hi - &lo);
        self.parts.insert(lo, hi);
    }

    pub fn measure(&self) -> &Rational {
        &self.measure
    }

    pub fn components(&self) -> usize {
        self.parts.len()
    }
}

/// Exact measure of the union of `(q_i - delta, q_i + delta)` over `i <= k`,
/// by sorting and merging.
pub fn union_measure(k: u64, delta: &Rational) -> Rational {
    let mut centers: Vec<Rational> = QEnumeration::new()
        .take(k as usize)
        .map(|(_, q)| q.to_rational())
        .collect();
    centers.sort();
    let mut total = Rational::zero();
    let mut cur: Option<(Rational, Rational)> = None;
    for q in centers {
        let (lo, hi) = (&q - delta, &q + delta);
        cur = match cur {
            Some((a, b)) if lo <= b => Some((a, hi.max(b))),
            Some((a, b)) => {
                total = total + (b - a);
                Some((lo, hi))
            }
            None => Some((lo, hi)),
        };
    }
    if let Some((a, b)) = cur {
        total = total + (b - a);
    }
    total
}

/// `union_measure(k, delta)` for every `k` in `1..=k_max`.
pub fn union_measure_prefixes(k_max: u64, delta: &Rational) -> Vec<Rational> {
    let mut u = IntervalUnion::new();
    QEnumeration::new()
        .take(k_max as usize)
        .map(|(_, q)| {
            let q = q.to_rational();
            u.insert(&q - delta, &q + delta);
            u.measure().clone()
        })
        .collect()
}

/// Partial sums of the summability conditions up to decision `J`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummabilityReport {
    pub j_max: u64,
    pub p: u32,
    pub alpha: Rational,
    pub epsilon: ErrorSchedule,
    /// `j * eta_{n(1)}`.
    pub first_eta_term: Rational,
    /// Upper bound on `sum_{j<=J} j eta_{n(j)}`; equal to it when
    /// `eta_sum_exact` is set.
    pub eta_sum_upper: Rational,
    pub eta_sum_exact: bool,
    /// `sum_{j<=J} j^{1-p}`.
    pub comparison_sum: Rational,
    /// `C` in `eta_n <= C/n`.
    pub eta_constant: Rational,
    /// Set when the eta sum may exceed `C * comparison_sum`.
    pub eta_flag: bool,
    /// The `s^2` profile used for the radius sum (held constant).
    pub s_sq: Rational,
    /// Radius precision in bits (`2^-slack` over-approximation).
    pub radius_slack_bits: u64,
    /// Upper bound on `sum_{j<=J} j delta'_{n(j)}`.
    pub delta_sum_upper: Rational,
    /// Constant `c` in the Borel-Cantelli measure sum. Not fixed by the
    /// theory; 1 is used here.
    pub c: Rational,
    /// `sum_j 2 k_j c delta'_{n(j)}`, bounding `sum_j lambda(E(k_j, c delta'))`.
    pub measure_sum_upper: Rational,
}

/// Radius precision used for the radius partial sums.
pub const SUMMABILITY_SLACK_BITS: u64 = 64;

/// Exact partial sums up to `J` for `cfg`, with the radius evaluated at a
/// constant `s_sq`.
pub fn summability_report(
    cfg: &IdentifierConfig,
    j_max: u64,
    s_sq: &Rational,
) -> Result<SummabilityReport, DiagnosticsError> {
    cfg.validate()?;
    let mut eta_sum = ExactSum::new();
    let mut eta_exact = true;
    let mut cmp_sum = ExactSum::new();
    let mut delta_sum = ExactSum::new();
    let mut first = None;
    for j in 1..=j_max.max(1) {
        let n = cfg
            .decision_time_wide(j)
            .ok_or(DiagnosticsError::Overflow(j))?;
        let nj = Rational::from_integer(j).div_int(num_bigint::BigInt::from(n));
        cmp_sum.add(&nj);
        let eta = cfg.epsilon.eta(n);
        let eta_up = match &eta {
            Tolerance::Exact(e) => e.clone(),
            t => {
                eta_exact = false;
                t.upper_bound()
            }
        };
        let term = eta_up.mul_int(j);
        if first.is_none() {
            first = Some(term.clone());
        }
        eta_sum.add(&term);
        let slack = SUMMABILITY_SLACK_BITS.min(u64::try_from(n).unwrap_or(u64::MAX));
        let rad = radius_with_slack(n, s_sq, &cfg.alpha, slack)?;
        let thr = rad
            .add(&eta)
            .map(|t| t.upper_bound())
            .unwrap_or_else(|| rad.upper_bound() + eta_up.clone());
        delta_sum.add(&thr.mul_int(j));
    }
    let eta_sum_upper = eta_sum.value();
    let comparison_sum = cmp_sum.value();
    let eta_constant = match cfg.epsilon {
        ErrorSchedule::Pow2 => Rational::one(),
        ErrorSchedule::InverseSquare => Rational::from(2i64),
    };
    let eta_flag = eta_sum_upper > &eta_constant * &comparison_sum;
    let delta_sum_upper = delta_sum.value();
    let c = Rational::one();
    let measure_sum_upper = (&c * &delta_sum_upper).mul_int(2);
    Ok(SummabilityReport {
        j_max,
        p: cfg.p,
        alpha: cfg.alpha.clone(),
        epsilon: cfg.epsilon,
        first_eta_term: first.expect("j_max >= 1"),
        eta_sum_upper,
        eta_sum_exact: eta_exact,
        comparison_sum,
        eta_constant,
        eta_flag,
        s_sq: s_sq.clone(),
        radius_slack_bits: SUMMABILITY_SLACK_BITS,
        delta_sum_upper,
        c,
        measure_sum_upper,
    })
}

/// `|d| >= delta_n` for the exact radius `delta_n` at sample size `n`.
pub fn violates_radius(n: u64, d: &Rational, s_sq: &Rational, alpha: &Rational) -> bool {
    let d = d.abs();
    // d >= 2^-n
    if Tolerance::pow2(n as u128).exceeds(&d) {
        return false;
    }
    if s_sq.is_zero() {
        return true;
    }
    // d >= (1+alpha) sqrt(2 s^2 L / n)  iff  L <= d^2 n / (2 (1+alpha)^2 s^2)
    let one_plus = Rational::one() + alpha;
    let df = d.to_f64();
    let sf = s_sq.to_f64();
    let af = one_plus.to_f64();
    let ll = crate::precise::loglog_f64(n as u128);
    let lhs = df * df * n as f64;
    let rhs = 2.0 * af * af * sf * ll;
    if lhs.is_finite()
        && rhs.is_finite()
        && (lhs - rhs).abs() > 1e-9 * (lhs.abs() + rhs.abs())
        && lhs > 1e-290
    {
        return lhs > rhs;
    }
    let r = (d.square().mul_int(n)) / (one_plus.square() * s_sq).mul_int(2);
    compare_loglog(n as u128, &r) != Ordering::Greater
}

/// Last `n <= horizon` with `|mean_n - mu| >= delta_n`, 0 if none.
pub fn last_violation(
    spec: &DistributionSpec,
    seed: u64,
    horizon: u64,
    alpha: &Rational,
) -> Result<u64, DiagnosticsError> {
    check_coverage_spec(spec)?;
    let mu = spec.mean().expect("checked rational mean");
    let mut stream = ReadoutStream::new(spec.clone(), seed, ErrorSchedule::Pow2)?;
    let mut stats = RunningStats::new();
    let mut last = 0;
    for n in 1..=horizon {
        stats.push(&stream.next_readout());
        let mean = stats.mean().expect("n >= 1");
        let s_sq = stats.variance().expect("n >= 1");
        if violates_radius(n, &(mean - &mu), &s_sq, alpha) {
            last = n;
        }
    }
    Ok(last)
}

fn check_coverage_spec(spec: &DistributionSpec) -> Result<(), DiagnosticsError> {
    spec.validate()?;
    if spec.is_degenerate() {
        return Err(DiagnosticsError::Degenerate);
    }
    if !spec.has_rational_support() || spec.mean().is_none() {
        return Err(DiagnosticsError::IrrationalMean);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoverageRow {
    pub seed: u64,
    pub last_violation: u64,
}

/// Distribution of last-violation times over seeds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoverageTable {
    pub horizon: u64,
    pub rows: Vec<CoverageRow>,
    /// `(bound, count)`: seeds whose last violation is at most `bound`.
    pub cumulative: Vec<(u64, usize)>,
    pub median: u64,
    pub max: u64,
}

impl CoverageTable {
    pub fn from_rows(horizon: u64, mut rows: Vec<CoverageRow>) -> Self {
        rows.sort_by_key(|r| r.seed);
        let mut times: Vec<u64> = rows.iter().map(|r| r.last_violation).collect();
        times.sort_unstable();
        let mut bounds = vec![0u64];
        let mut b = 10u64;
        while b < horizon {
            bounds.push(b);
            b = b.saturating_mul(10);
        }
        bounds.push(horizon);
        let cumulative = bounds
            .into_iter()
            .map(|b| (b, times.iter().filter(|&&t| t <= b).count()))
            .collect();
        CoverageTable {
            horizon,
            median: times
                .get(times.len().saturating_sub(1) / 2)
                .copied()
                .unwrap_or(0),
            max: times.last().copied().unwrap_or(0),
            rows,
            cumulative,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,last_violation\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.seed, r.last_violation));
        }
        out
    }
}

/// Last-violation times of the LIL radius for each seed.
pub fn lil_coverage(
    spec: &DistributionSpec,
    seeds: &[u64],
    horizon: u64,
    alpha: &Rational,
) -> Result<CoverageTable, DiagnosticsError> {
    check_coverage_spec(spec)?;
    let rows = crate::par::map(seeds, |&seed| {
        last_violation(spec, seed, horizon, alpha).map(|t| CoverageRow {
            seed,
            last_violation: t,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(CoverageTable::from_rows(horizon, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifier::radius;

    fn r(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn measure_examples() {
        assert_eq!(union_measure(1, &r("1/10")), r("1/5"));
        assert_eq!(union_measure(2, &r("1")), r("3"));
        let m = union_measure(10, &r("1/100"));
        assert!(m <= r("1/5"));
        // q_1..q_10 are spread out, so nothing overlaps at this radius
        assert_eq!(m, r("1/5"));
    }

    #[test]
    fn incremental_matches_batch() {
        for delta in ["1/2", "1/7", "1/64", "3"] {
            let d = r(delta);
            let pre = union_measure_prefixes(200, &d);
            for k in [1u64, 2, 3, 17, 64, 200] {
                assert_eq!(
                    pre[k as usize - 1],
                    union_measure(k, &d),
                    "k={k} delta={delta}"
                );
            }
        }
    }

    #[test]
    fn union_handles_containment_and_touching() {
        let mut u = IntervalUnion::new();
        u.insert(r("0"), r("1"));
        u.insert(r("2"), r("3"));
        u.insert(r("1"), r("2"));
        assert_eq!(u.components(), 1);
        assert_eq!(*u.measure(), r("3"));
        u.insert(r("1/2"), r("5/2"));
        assert_eq!(*u.measure(), r("3"));
        u.insert(r("-1"), r("4"));
        assert_eq!(*u.measure(), r("5"));
        u.insert(r("7"), r("7"));
        assert_eq!(*u.measure(), r("5"));
    }

    #[test]
    fn summability_examples() {
        let cfg = IdentifierConfig::default();
        let rep = summability_report(&cfg, 1, &r("1/4")).unwrap();
        assert_eq!(rep.first_eta_term, r("1/2"));
        assert_eq!(rep.eta_sum_upper, r("1/2"));
        assert!(rep.eta_sum_exact);
        assert!(!rep.eta_flag);
        let rep = summability_report(&cfg, 40, &r("1/4")).unwrap();
        assert!(!rep.eta_sum_exact);
        assert!(rep.comparison_sum < r("1.0370"));
        assert!(!rep.eta_flag);
        assert_eq!(rep.c, Rational::one());
        // radius sum includes eta
        assert!(rep.delta_sum_upper > rep.eta_sum_upper);
    }

    #[test]
    fn summability_sums_grow_with_j() {
        let cfg = IdentifierConfig::default();
        let mut prev: Option<SummabilityReport> = None;
        for j in [1u64, 2, 5, 11, 30] {
            let rep = summability_report(&cfg, j, &r("1/4")).unwrap();
            if let Some(p) = prev {
                assert!(rep.eta_sum_upper > p.eta_sum_upper);
                assert!(rep.delta_sum_upper > p.delta_sum_upper);
                assert!(rep.comparison_sum > p.comparison_sum);
            }
            prev = Some(rep);
        }
    }

    #[test]
    fn violation_agrees_with_certified_radius() {
        // away from the boundary the exact test agrees with delta^
        let cfg = IdentifierConfig {
            alpha: r("1/10"),
            ..IdentifierConfig::default()
        };
        let s_sq = r("1");
        let rad = radius(100, &s_sq, &cfg).unwrap();
        let d = rad.as_exact().unwrap().clone();
        assert!(violates_radius(
            100,
            &(&d + r("1/1000000")),
            &s_sq,
            &cfg.alpha
        ));
        assert!(!violates_radius(
            100,
            &(&d - r("1/1000000")),
            &s_sq,
            &cfg.alpha
        ));
        // floor term alone
        assert!(violates_radius(10, &r("1/1024"), &r("0"), &cfg.alpha));
        assert!(!violates_radius(10, &r("1/1025"), &r("0"), &cfg.alpha));
    }

    #[test]
    fn coverage_rejects_bad_specs() {
        let c = DistributionSpec::Constant { q: r("1/3") };
        assert_eq!(
            lil_coverage(&c, &[1], 10, &r("1/2")),
            Err(DiagnosticsError::Degenerate)
        );
        let irr = DistributionSpec::IrrationalTwoPoint {
            mu: "sqrt2".into(),
            offset: r("1"),
        };
        assert_eq!(
            lil_coverage(&irr, &[1], 10, &r("1/2")),
            Err(DiagnosticsError::IrrationalMean)
        );
    }

    #[test]
    fn coverage_table_shape() {
        let spec = DistributionSpec::TwoPoint {
            a: r("0"),
            b: r("1"),
            p: r("1/2"),
        };
        let t = lil_coverage(&spec, &[3, 1, 2], 2000, &r("1/2")).unwrap();
        assert_eq!(
            t.rows.iter().map(|r| r.seed).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert_eq!(t.cumulative.last().unwrap(), &(2000, 3));
        assert!(t.max <= 2000);
        let none = CoverageTable::from_rows(
            100,
            vec![CoverageRow {
                seed: 9,
                last_violation: 0,
            }],
        );
        assert_eq!(none.cumulative[0], (0, 1));
    }
}
