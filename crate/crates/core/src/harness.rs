//! Batch experiments: configuration, seeded trials, verification sweeps and
//! aggregate reports.
//!
//! A run writes `trials.csv` and `summary.json` into the output directory.
//! Line 1 of `trials.csv` carries the generation time and line 2 the fully
//! resolved configuration as JSON; everything after that depends only on
//! the configuration.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{lil_coverage, summability_report, union_measure_prefixes, CoverageTable};
use crate::enumeration::index_of_u64;
use crate::identifier::{radius, DecisionRecord, IdentifierConfig};
use crate::limit::{resolve_approximator, LimitApproximator, TargetSet};
use crate::machine::ProgramCatalog;
use crate::membership::{
    composed_test, induced_from_composition, run_trial, IdentifierClass, TrialRecord,
};
use crate::par;
use crate::precise::compare_loglog;
use crate::rational::Rational;
use crate::reals::{Family, Real};
use crate::streams::{DistributionSpec, ReadoutStream};
use crate::tolerance::Tolerance;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed result file {path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("trial for seed {seed} failed: {msg}")]
    Trial { seed: u64, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn default_distribution() -> DistributionSpec {
    DistributionSpec::TwoPoint {
        a: Rational::zero(),
        b: Rational::one(),
        p: Rational::from_i64s(1, 2),
    }
}

fn default_set() -> String {
    "even-indices".into()
}

fn default_approximator() -> String {
    "default".into()
}

fn default_class() -> String {
    "rationals".into()
}

fn default_horizon() -> u64 {
    10_000
}

fn default_seeds() -> Vec<u64> {
    (1..=50).collect()
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// Settings of the `verify` sweeps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Largest `k` in the measure-bound sweep.
    pub union_k: u64,
    /// The sweep uses `delta = 2^-1, ..., 2^-union_delta_exps`.
    pub union_delta_exps: u64,
    /// Number of decisions in the summability partial sums.
    pub summability_j: u64,
    pub coverage_seeds: Vec<u64>,
    pub coverage_horizon: u64,
    /// Round trip over indices `1..=round_trip_indices`.
    pub round_trip_indices: u64,
    /// Each row is run to `n(i) + 2 * extra` and must be constant over the
    /// last `extra` stages.
    pub round_trip_extra: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            union_k: 1000,
            union_delta_exps: 20,
            summability_j: 10_000,
            coverage_seeds: (1..=50).collect(),
            coverage_horizon: 100_000,
            round_trip_indices: 50,
            round_trip_extra: 10_000,
        }
    }
}

/// One experiment: a distribution, a target set and the test settings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_distribution")]
    pub distribution: DistributionSpec,
    /// `even-indices`, `halting-catalog`, `decidable:<predicate>` or
    /// `indices:<list>`.
    #[serde(default = "default_set")]
    pub set: String,
    #[serde(default = "default_approximator")]
    pub approximator: String,
    /// `rationals` or a list of reals such as `sqrt2,sqrt3,rational:3/2`.
    #[serde(default = "default_class")]
    pub class: String,
    #[serde(default)]
    pub identifier: IdentifierConfig,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Program catalog for `halting-catalog`; the built-in one if unset.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub trace: bool,
    /// Where results go. Not part of the logged configuration.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

/// An experiment with every name resolved.
#[derive(Clone)]
pub struct Resolved {
    pub set: TargetSet,
    pub approximator: Arc<dyn LimitApproximator>,
    pub class: IdentifierClass,
    pub truth: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
        toml::from_str(text).map_err(config_err)
    }

    /// Reads a config file. A relative catalog path is taken relative to
    /// the file.
    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(c), Some(dir)) = (&cfg.catalog, path.parent()) {
            if c.is_relative() {
                cfg.catalog = Some(dir.join(c));
            }
        }
        Ok(cfg)
    }

    /// The resolved configuration as one line of JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon == 0 {
            return Err(config_err("horizon must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seed list is empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("seed list has duplicates"));
        }
        self.identifier.validate().map_err(config_err)?;
        self.distribution.validate().map_err(config_err)?;
        Ok(())
    }

    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        self.validate()?;
        let catalog = match &self.catalog {
            Some(p) => Some(Arc::new(ProgramCatalog::load(p).map_err(config_err)?)),
            None => None,
        };
        let set = TargetSet::parse(&self.set, catalog).map_err(config_err)?;
        let approximator = resolve_approximator(&self.approximator, &set).map_err(config_err)?;
        let (class, truth) = if self.class.trim() == "rationals" {
            let truth = self.distribution.mean().is_some_and(|m| set.contains(&m));
            (IdentifierClass::Rationals, truth)
        } else {
            let members = self
                .class
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(Real::parse)
                .collect::<Result<Vec<_>, _>>()
                .map_err(config_err)?;
            if members.is_empty() {
                return Err(config_err("empty class list"));
            }
            let truth =
                family_index(&members, &self.distribution).is_some_and(|j| set.contains_index(j));
            (
                IdentifierClass::Family(Arc::new(Family::new(members))),
                truth,
            )
        };
        Ok(Resolved {
            set,
            approximator,
            class,
            truth,
        })
    }
}

/// 1-based position of the distribution's mean in `members`.
fn family_index(members: &[Real], spec: &DistributionSpec) -> Option<u64> {
    let pos = match (spec.mean(), spec) {
        (Some(m), _) => members
            .iter()
            .position(|r| r.as_rational().as_ref() == Some(&m)),
        (None, DistributionSpec::IrrationalTwoPoint { mu, .. }) => {
            let real = Real::parse(mu).ok()?;
            members.iter().position(|r| *r == real)
        }
        _ => None,
    };
    pos.map(|p| p as u64 + 1)
}

/// Parses `1,2,5-9` into a list of seeds.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Usage(format!("bad seed list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Applies `COVERLAB_THREADS` if set.
pub fn init_threads_from_env() {
    if let Some(n) = std::env::var("COVERLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        par::set_threads(n);
    }
}

/// One row of `trials.csv`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial_id: u64,
    pub seed: u64,
    pub distribution: String,
    pub mu: String,
    pub set_name: String,
    pub truth: u8,
    pub horizon: u64,
    pub mistakes: u64,
    pub last_change: u64,
    #[serde(rename = "final")]
    pub final_verdict: u8,
    pub final_index: Option<u64>,
    pub index_last_change: Option<u64>,
    pub stabilized_correct: bool,
}

impl TrialRow {
    fn new(
        trial_id: u64,
        seed: u64,
        cfg: &ExperimentConfig,
        set_name: &str,
        rec: &TrialRecord,
    ) -> Self {
        TrialRow {
            trial_id,
            seed,
            distribution: cfg.distribution.label(),
            mu: cfg.distribution.mean_label(),
            set_name: set_name.to_string(),
            truth: rec.truth.into(),
            horizon: rec.horizon,
            mistakes: rec.mistakes,
            last_change: rec.last_change,
            final_verdict: rec.final_verdict.into(),
            final_index: rec.final_index,
            index_last_change: rec.index_last_change,
            stabilized_correct: rec.stabilized_correct,
        }
    }
}

/// Aggregate over the trials of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub distribution: String,
    pub mu: String,
    pub set_name: String,
    pub approximator: String,
    pub horizon: u64,
    pub trials: usize,
    pub stabilized_correct: usize,
    pub fraction_stabilized_correct: f64,
    pub median_last_change: u64,
    pub max_mistakes: u64,
    pub median_index_last_change: Option<u64>,
}

fn lower_median(mut v: Vec<u64>) -> Option<u64> {
    v.sort_unstable();
    v.get(v.len().checked_sub(1)? / 2).copied()
}

/// Result of `run`: rows in seed order plus the aggregate.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<TrialRow>,
    pub summary: RunSummary,
    pub traces: Vec<(u64, Vec<DecisionRecord>)>,
}

/// Runs one trial per seed, in parallel, and merges in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let res = cfg.resolve()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let set_name = res.set.name();
    let results = par::map(
        &seeds,
        |&seed| -> Result<(TrialRecord, Vec<DecisionRecord>), HarnessError> {
            let fail = |e: &dyn std::fmt::Display| HarnessError::Trial {
                seed,
                msg: e.to_string(),
            };
            let mut test = composed_test(
                &cfg.identifier,
                &res.class,
                res.approximator.clone(),
                cfg.trace,
            )
            .map_err(|e| fail(&e))?;
            let mut stream =
                ReadoutStream::new(cfg.distribution.clone(), seed, cfg.identifier.epsilon)
                    .map_err(|e| fail(&e))?;
            let rec =
                run_trial(&mut test, &mut stream, cfg.horizon, res.truth).map_err(|e| fail(&e))?;
            Ok((
                rec,
                crate::membership::SequentialTest::take_trace(&mut test),
            ))
        },
    );
    let mut rows = Vec::with_capacity(seeds.len());
    let mut traces = Vec::new();
    for (k, (seed, r)) in seeds.iter().zip(results).enumerate() {
        let (rec, trace) = r?;
        rows.push(TrialRow::new(k as u64 + 1, *seed, cfg, &set_name, &rec));
        if cfg.trace {
            traces.push((*seed, trace));
        }
    }
    let ok = rows.iter().filter(|r| r.stabilized_correct).count();
    let summary = RunSummary {
        distribution: cfg.distribution.label(),
        mu: cfg.distribution.mean_label(),
        set_name,
        approximator: res.approximator.name(),
        horizon: cfg.horizon,
        trials: rows.len(),
        stabilized_correct: ok,
        fraction_stabilized_correct: ok as f64 / rows.len() as f64,
        median_last_change: lower_median(rows.iter().map(|r| r.last_change).collect()).unwrap_or(0),
        max_mistakes: rows.iter().map(|r| r.mistakes).max().unwrap_or(0),
        median_index_last_change: lower_median(
            rows.iter().filter_map(|r| r.index_last_change).collect(),
        ),
    };
    Ok(RunOutput {
        rows,
        summary,
        traces,
    })
}

/// Renders `trials.csv`, header lines included.
pub fn trials_csv(cfg: &ExperimentConfig, rows: &[TrialRow], generated_at: u64) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8");
    format!(
        "# generated_at_unix={generated_at}\n# config={}\n{body}",
        cfg.to_json()
    )
}

/// `run`: executes the experiment and writes the result files. Nothing is
/// written if the configuration does not resolve.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let out = run_experiment(cfg)?;
    let dir = &cfg.out;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let trials = dir.join("trials.csv");
    fs::write(&trials, trials_csv(cfg, &out.rows, now)).map_err(io_err(&trials))?;
    let summary = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&out.summary).expect("summary serializes") + "\n";
    fs::write(&summary, json).map_err(io_err(&summary))?;
    if cfg.trace {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
        for (seed, trace) in &out.traces {
            let path = tdir.join(format!("seed-{seed}.jsonl"));
            let mut text = String::new();
            for rec in trace {
                text.push_str(&serde_json::to_string(rec).expect("trace serializes"));
                text.push('\n');
            }
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    Ok(out)
}

/// Outcome of one verification check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    /// Statistical checks are reported but do not affect the exit status.
    pub exact: bool,
    pub passed: bool,
    pub detail: String,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.exact)
    }

    pub fn failed_names(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.exact && !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let status = match (c.passed, c.exact) {
                (true, _) => "ok",
                (false, true) => "FAILED",
                (false, false) => "note",
            };
            let _ = writeln!(s, "[{status}] {}: {}", c.name, c.detail);
            for v in c.violations.iter().take(10) {
                let _ = writeln!(s, "    {v}");
            }
            if c.violations.len() > 10 {
                let _ = writeln!(s, "    ... {} more", c.violations.len() - 10);
            }
        }
        s
    }
}

/// Deliberate defects for exercising `verify`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Shrinks the radius by a factor `1 - 2^-4` before checking it.
    RadiusUnder,
}

impl std::str::FromStr for Fault {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Fault, HarnessError> {
        match s {
            "radius" => Ok(Fault::RadiusUnder),
            _ => Err(HarnessError::Usage(format!("unknown fault `{s}`"))),
        }
    }
}

fn check(name: &str, exact: bool, detail: String, violations: Vec<String>) -> Check {
    Check {
        name: name.into(),
        exact,
        passed: violations.is_empty(),
        detail,
        violations,
    }
}

fn check_union(v: &VerifyConfig) -> Check {
    let deltas: Vec<u64> = (1..=v.union_delta_exps).collect();
    let violations: Vec<String> = par::map(&deltas, |&e| {
        let delta = Rational::pow2_neg(e);
        union_measure_prefixes(v.union_k, &delta)
            .into_iter()
            .enumerate()
            .filter_map(|(k, m)| {
                let bound = delta.mul_int(2 * (k as u64 + 1));
                (m > bound).then(|| format!("k={} delta=2^-{e}: measure {m} > {bound}", k + 1))
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let detail = format!(
        "union measure <= 2 k delta for k <= {} and delta = 2^-1..2^-{}",
        v.union_k, v.union_delta_exps
    );
    check("measure-bound", true, detail, violations)
}

fn check_summability(cfg: &ExperimentConfig) -> Result<Check, HarnessError> {
    let mut s_sq = cfg.distribution.variance();
    if s_sq.is_zero() {
        s_sq = Rational::from_i64s(1, 4);
    }
    let rep =
        summability_report(&cfg.identifier, cfg.verify.summability_j, &s_sq).map_err(config_err)?;
    let mut violations = Vec::new();
    if rep.eta_flag {
        violations.push(format!(
            "sum j eta_n(j) <= {} exceeds {} * sum j^(1-p) = {}",
            rep.eta_sum_upper.to_f64(),
            rep.eta_constant,
            (&rep.eta_constant * &rep.comparison_sum).to_f64()
        ));
    }
    let detail = format!(
        "J={}: sum j eta <= {:.12}, sum j^(1-p) = {:.12}, sum j delta' <= {:.6} (s^2 = {}, c = {}, measure sum <= {:.6})",
        rep.j_max,
        rep.eta_sum_upper.to_f64(),
        rep.comparison_sum.to_f64(),
        rep.delta_sum_upper.to_f64(),
        rep.s_sq,
        rep.c,
        rep.measure_sum_upper.to_f64(),
    );
    Ok(check("summability", true, detail, violations))
}

/// Checks `delta_n <= delta^ <= delta_n + 2^-slack` on a grid.
fn check_radius(cfg: &IdentifierConfig, fault: Option<Fault>) -> Check {
    let ns: [u64; 11] = [1, 2, 3, 4, 5, 10, 64, 100, 729, 1000, 4096];
    let ssq: Vec<Rational> = ["0", "1/100", "1/4", "1", "2", "17/3"]
        .iter()
        .map(|s| s.parse().expect("literal"))
        .collect();
    let one_plus = Rational::one() + &cfg.alpha;
    let mut violations = Vec::new();
    for &n in &ns {
        for s in &ssq {
            let d = match radius(n as u128, s, cfg) {
                Ok(Tolerance::Exact(d)) => d,
                Ok(t) => t.upper_bound(),
                Err(e) => {
                    violations.push(format!("n={n} s^2={s}: {e}"));
                    continue;
                }
            };
            let d = match fault {
                Some(Fault::RadiusUnder) => d.mul_int(15).div_int(16),
                None => d,
            };
            let floor = Rational::pow2_neg(n);
            let scale = (one_plus.square() * s).mul_int(2);
            // d^2 n / (2 (1+alpha)^2 s^2) >= ln ln n  iff  d >= LIL term
            let covers_lil = |x: &Rational| {
                s.is_zero()
                    || compare_loglog(n as u128, &(x.square().mul_int(n) / &scale))
                        != Ordering::Greater
            };
            let under_lil = |x: &Rational| {
                !s.is_zero()
                    && compare_loglog(n as u128, &(x.square().mul_int(n) / &scale))
                        != Ordering::Less
            };
            if d < floor || !covers_lil(&d) {
                violations.push(format!("n={n} s^2={s}: radius {d} is below delta_n"));
                continue;
            }
            let e = &d - Rational::pow2_neg(cfg.slack_bits(n as u128));
            if e > floor && !under_lil(&e) {
                violations.push(format!(
                    "n={n} s^2={s}: radius {d} exceeds delta_n + 2^-{}",
                    cfg.slack_bits(n as u128)
                ));
            }
        }
    }
    let detail = format!(
        "delta_n <= radius <= delta_n + slack on {} grid points",
        ns.len() * ssq.len()
    );
    check("radius", true, detail, violations)
}

fn coverage(cfg: &ExperimentConfig) -> Result<(Check, CoverageTable), HarnessError> {
    let spec = &cfg.distribution;
    let eligible = spec.has_rational_support() && !spec.is_degenerate();
    let spec = if eligible {
        spec.clone()
    } else {
        default_distribution()
    };
    let v = &cfg.verify;
    let table = lil_coverage(
        &spec,
        &v.coverage_seeds,
        v.coverage_horizon,
        &cfg.identifier.alpha,
    )
    .map_err(config_err)?;
    let half = table
        .rows
        .iter()
        .filter(|r| r.last_violation <= v.coverage_horizon / 2)
        .count();
    let detail = format!(
        "{}{}: last violation median {}, max {}, {}/{} seeds at or before N/2",
        spec.label(),
        if eligible {
            ""
        } else {
            " (configured distribution not eligible)"
        },
        table.median,
        table.max,
        half,
        table.rows.len()
    );
    Ok((check("lil-coverage", false, detail, Vec::new()), table))
}

fn check_round_trip(cfg: &ExperimentConfig, res: &Resolved) -> Result<Check, HarnessError> {
    let IdentifierClass::Rationals = res.class else {
        return Ok(Check {
            name: "round-trip".into(),
            exact: true,
            passed: true,
            detail: "skipped: round trip is defined over the rationals".into(),
            violations: Vec::new(),
        });
    };
    let v = &cfg.verify;
    let induced = induced_from_composition(
        cfg.identifier.clone(),
        IdentifierClass::Rationals,
        res.approximator.clone(),
    )
    .map_err(config_err)?;
    let idx: Vec<u64> = (1..=v.round_trip_indices).collect();
    let violations: Vec<String> = par::map(&idx, |&i| {
        let Some(ni) = cfg.identifier.decision_time(i) else {
            return Some(format!("i={i}: n({i}) overflows"));
        };
        let horizon = ni.saturating_add(2 * v.round_trip_extra);
        let log = induced.row(i, horizon);
        let want = res.set.contains_index(i);
        let got = log.last().unwrap_or(false);
        if got != want {
            Some(format!(
                "i={i}: row ends at {} but 1_A(i) = {}",
                u8::from(got),
                u8::from(want)
            ))
        } else if log.last_change() + v.round_trip_extra > horizon {
            Some(format!(
                "i={i}: row still changing at stage {}",
                log.last_change()
            ))
        } else {
            None
        }
    })
    .into_iter()
    .flatten()
    .collect();
    let detail = format!(
        "induced rows of {} match 1_A(i) for i <= {} (each run to n(i) + {})",
        res.set.name(),
        v.round_trip_indices,
        2 * v.round_trip_extra
    );
    Ok(check("round-trip", true, detail, violations))
}

/// `verify`: exact invariants plus the LIL coverage table.
pub fn cmd_verify(
    cfg: &ExperimentConfig,
    fault: Option<Fault>,
) -> Result<(VerifyReport, CoverageTable), HarnessError> {
    let res = cfg.resolve()?;
    let mut checks = vec![
        check_radius(&cfg.identifier, fault),
        check_union(&cfg.verify),
        check_summability(cfg)?,
    ];
    checks.push(check_round_trip(cfg, &res)?);
    let (cov, table) = coverage(cfg)?;
    checks.push(cov);
    Ok((VerifyReport { checks }, table))
}

/// One row of the aggregate report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub distribution: String,
    pub set_name: String,
    pub horizon: u64,
    pub trials: usize,
    pub stabilized_correct: usize,
    pub fraction: f64,
    pub max_mistakes: u64,
    pub median_last_change: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<40} {:<24} {:>10} {:>7} {:>8} {:>9} {:>12}\n",
            "distribution", "set", "horizon", "trials", "correct", "fraction", "max_mistakes"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<40} {:<24} {:>10} {:>7} {:>8} {:>9.4} {:>12}",
                r.distribution,
                r.set_name,
                r.horizon,
                r.trials,
                r.stabilized_correct,
                r.fraction,
                r.max_mistakes
            );
        }
        s
    }
}

/// Reads the trial rows of a `trials.csv`, skipping `#` header lines.
pub fn read_trials(path: &Path) -> Result<Vec<TrialRow>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    if body.trim().is_empty() {
        return Err(HarnessError::Malformed {
            path: path.to_path_buf(),
            msg: "no header row".into(),
        });
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<TrialRow>, _>>()
        .map_err(|e| HarnessError::Malformed {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    Ok(rows)
}

/// `report`: aggregates result files by distribution, set and horizon.
pub fn cmd_report(paths: &[PathBuf]) -> Result<Report, HarnessError> {
    if paths.is_empty() {
        return Err(HarnessError::Usage(
            "report needs at least one result file".into(),
        ));
    }
    let mut groups: BTreeMap<(String, String, u64), Vec<TrialRow>> = BTreeMap::new();
    for p in paths {
        let p = if p.is_dir() {
            p.join("trials.csv")
        } else {
            p.clone()
        };
        for row in read_trials(&p)? {
            groups
                .entry((row.distribution.clone(), row.set_name.clone(), row.horizon))
                .or_default()
                .push(row);
        }
    }
    let rows = groups
        .into_iter()
        .map(|((distribution, set_name, horizon), rs)| {
            let ok = rs.iter().filter(|r| r.stabilized_correct).count();
            ReportRow {
                distribution,
                set_name,
                horizon,
                trials: rs.len(),
                stabilized_correct: ok,
                fraction: ok as f64 / rs.len() as f64,
                max_mistakes: rs.iter().map(|r| r.mistakes).max().unwrap_or(0),
                median_last_change: lower_median(rs.iter().map(|r| r.last_change).collect())
                    .unwrap_or(0),
            }
        })
        .collect();
    Ok(Report { rows })
}

/// Index of the mean when it is a rational with a `u64` index.
pub fn mean_index(spec: &DistributionSpec) -> Option<u64> {
    spec.mean().and_then(|m| index_of_u64(&m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.horizon, 10_000);
        assert_eq!(cfg.seeds.len(), 50);
        assert_eq!(cfg.set, "even-indices");
        cfg.resolve().unwrap();
        let json = cfg.to_json();
        assert!(json.contains("\"kind\":\"two_point\""));
        assert!(!json.contains("\"out\""));
    }

    #[test]
    fn config_errors() {
        let bad_set = ExperimentConfig::from_toml_str("set = \"primes\"").unwrap();
        assert!(matches!(bad_set.resolve(), Err(HarnessError::Config(_))));
        assert!(ExperimentConfig::from_toml_str("sets = \"x\"").is_err());
        let no_seeds = ExperimentConfig::from_toml_str("seeds = []").unwrap();
        assert!(no_seeds.resolve().is_err());
        let dup = ExperimentConfig::from_toml_str("seeds = [1, 1]").unwrap();
        assert!(dup.resolve().is_err());
        let zero = ExperimentConfig::from_toml_str("horizon = 0").unwrap();
        assert!(zero.resolve().is_err());
        let p = ExperimentConfig::from_toml_str("[identifier]\np = 4").unwrap();
        assert!(p.resolve().is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("3, 1,5-7").unwrap(), vec![3, 1, 5, 6, 7]);
        assert!(parse_seed_list("").is_err());
        assert!(parse_seed_list("4-2").is_err());
        assert!(parse_seed_list("x").is_err());
    }

    #[test]
    fn truth_resolution() {
        let cfg = ExperimentConfig::from_toml_str(
            "class = \"sqrt2,sqrt3,rational:3/2,sqrt5\"\nset = \"indices:3\"\n[distribution]\nkind = \"constant\"\nq = \"3/2\"\n",
        )
        .unwrap();
        assert!(cfg.resolve().unwrap().truth);
        let cfg = ExperimentConfig::from_toml_str(
            "class = \"sqrt2,sqrt3\"\nset = \"indices:1\"\n[distribution]\nkind = \"irrational_two_point\"\nmu = \"sqrt2\"\noffset = \"1\"\n",
        )
        .unwrap();
        assert!(cfg.resolve().unwrap().truth);
        let cfg =
            ExperimentConfig::from_toml_str("[distribution]\nkind = \"constant\"\nq = \"3/7\"\n")
                .unwrap();
        assert!(cfg.resolve().unwrap().truth);
    }

    #[test]
    fn radius_check_catches_fault() {
        let cfg = IdentifierConfig::default();
        assert!(check_radius(&cfg, None).passed);
        let c = check_radius(&cfg, Some(Fault::RadiusUnder));
        assert!(!c.passed);
        assert_eq!(c.name, "radius");
    }

    #[test]
    fn medians() {
        assert_eq!(lower_median(vec![]), None);
        assert_eq!(lower_median(vec![5, 1, 3, 2]), Some(2));
        assert_eq!(lower_median(vec![7]), Some(7));
    }
}
