//! Limit approximations `a(i, s)` of index sets and the named target sets
//! built on them.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::enumeration::{enumerate, index_of_u64};
use crate::machine::{analyze, Fate, GroundTruth, MachineState, ProgramCatalog, RunOutcome};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LimitError {
    #[error("unknown target set `{0}`")]
    UnknownSet(String),
    #[error("unknown approximator `{0}`")]
    UnknownApproximator(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("bad index list `{0}`")]
    IndexList(String),
}

/// A total bit function whose rows `s -> a(i, s)` change only finitely often.
pub trait LimitApproximator: Send + Sync {
    fn name(&self) -> String;

    fn approximate(&self, i: u64, s: u64) -> bool;

    /// Stages `s` in `from+1..=to` with `a(i, s) != a(i, s-1)`, ascending.
    fn change_points(&self, i: u64, from: u64, to: u64) -> Vec<u64> {
        let mut out = Vec::new();
        if to <= from {
            return out;
        }
        let mut prev = self.approximate(i, from);
        for s in from + 1..=to {
            let cur = self.approximate(i, s);
            if cur != prev {
                out.push(s);
            }
            prev = cur;
        }
        out
    }
}

impl fmt::Debug for dyn LimitApproximator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LimitApproximator({})", self.name())
    }
}

/// Last observed flip of row `i` within `1..=s_max`, if any.
pub fn stabilization_stage(a: &dyn LimitApproximator, i: u64, s_max: u64) -> Option<u64> {
    a.change_points(i, 0, s_max).last().copied()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstantApproximator(pub bool);

impl LimitApproximator for ConstantApproximator {
    fn name(&self) -> String {
        format!("constant-{}", u8::from(self.0))
    }

    fn approximate(&self, _i: u64, _s: u64) -> bool {
        self.0
    }

    fn change_points(&self, _i: u64, _from: u64, _to: u64) -> Vec<u64> {
        Vec::new()
    }
}

/// Decidable properties of an index or of the rational it names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IndexPredicate {
    EvenIndex,
    OddIndex,
    /// `q_i > 0`
    Positive,
    /// `q_i >= 0`
    Nonnegative,
    /// `q_i` is an integer
    Integer,
    /// the denominator of `q_i` is a power of two
    Dyadic,
    /// `0 <= q_i <= 1`
    UnitInterval,
    Indices(BTreeSet<u64>),
}

impl IndexPredicate {
    pub fn parse(name: &str) -> Result<IndexPredicate, LimitError> {
        Ok(match name {
            "even-index" | "even" => IndexPredicate::EvenIndex,
            "odd-index" | "odd" => IndexPredicate::OddIndex,
            "positive" => IndexPredicate::Positive,
            "nonnegative" => IndexPredicate::Nonnegative,
            "integer" => IndexPredicate::Integer,
            "dyadic" => IndexPredicate::Dyadic,
            "unit-interval" => IndexPredicate::UnitInterval,
            other => return Err(LimitError::UnknownPredicate(other.to_string())),
        })
    }

    pub fn holds(&self, i: u64) -> bool {
        if i == 0 {
            return false;
        }
        let q = || enumerate(i).expect("i >= 1");
        match self {
            IndexPredicate::EvenIndex => i.is_multiple_of(2),
            IndexPredicate::OddIndex => i % 2 == 1,
            IndexPredicate::Positive => q().is_positive(),
            IndexPredicate::Nonnegative => !q().is_negative(),
            IndexPredicate::Integer => q().is_integer(),
            IndexPredicate::Dyadic => q().denom_log2().is_some(),
            IndexPredicate::UnitInterval => {
                let q = q();
                !q.is_negative() && q <= Rational::one()
            }
            IndexPredicate::Indices(set) => set.contains(&i),
        }
    }

    /// Membership of a rational, for predicates defined on values.
    pub fn holds_for(&self, q: &Rational) -> bool {
        match self {
            IndexPredicate::Positive => q.is_positive(),
            IndexPredicate::Nonnegative => !q.is_negative(),
            IndexPredicate::Integer => q.is_integer(),
            IndexPredicate::Dyadic => q.denom_log2().is_some(),
            IndexPredicate::UnitInterval => !q.is_negative() && *q <= Rational::one(),
            _ => index_of_u64(q).is_some_and(|i| self.holds(i)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            IndexPredicate::EvenIndex => "even-index".into(),
            IndexPredicate::OddIndex => "odd-index".into(),
            IndexPredicate::Positive => "positive".into(),
            IndexPredicate::Nonnegative => "nonnegative".into(),
            IndexPredicate::Integer => "integer".into(),
            IndexPredicate::Dyadic => "dyadic".into(),
            IndexPredicate::UnitInterval => "unit-interval".into(),
            IndexPredicate::Indices(set) => {
                let parts: Vec<String> = set.iter().map(u64::to_string).collect();
                format!("indices:{}", parts.join(","))
            }
        }
    }
}

/// `a(i, s) = 1_B(i)` for a decidable `B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecidableApproximator(pub IndexPredicate);

impl LimitApproximator for DecidableApproximator {
    fn name(&self) -> String {
        format!("decidable:{}", self.0.label())
    }

    fn approximate(&self, i: u64, _s: u64) -> bool {
        self.0.holds(i)
    }

    fn change_points(&self, _i: u64, _from: u64, _to: u64) -> Vec<u64> {
        Vec::new()
    }
}

/// `a(i, s) = [s >= stage]` for every `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlipOnceApproximator {
    pub stage: u64,
}

impl LimitApproximator for FlipOnceApproximator {
    fn name(&self) -> String {
        format!("flip-once:{}", self.stage)
    }

    fn approximate(&self, _i: u64, s: u64) -> bool {
        s >= self.stage
    }

    fn change_points(&self, _i: u64, from: u64, to: u64) -> Vec<u64> {
        if self.stage > from && self.stage <= to {
            vec![self.stage]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug)]
enum Row {
    HaltsAt(u64),
    Never,
    /// Undecided by analysis; simulated on demand.
    Simulate(Mutex<(u64, MachineState)>),
}

/// `a(i, s) = 1` iff the program attached to index `i` halts within `s`
/// steps. Indices without a program are constant 0.
///
/// Rows that analysis settles (a halt step, or a proof of looping) are
/// answered directly; anything else is simulated step by step, resuming
/// from the furthest stage reached so far.
#[derive(Debug)]
pub struct HaltingApproximator {
    catalog: Arc<ProgramCatalog>,
    rows: Vec<(u64, Row)>,
}

const ANALYSIS_STEPS: u64 = 1_000_000;

impl HaltingApproximator {
    pub fn new(catalog: Arc<ProgramCatalog>) -> Self {
        let rows = catalog
            .entries()
            .map(|e| {
                let row = match analyze(&e.program, ANALYSIS_STEPS) {
                    Fate::Halts(t) => Row::HaltsAt(t),
                    Fate::Loops(_) => Row::Never,
                    Fate::Unknown => Row::Simulate(Mutex::new((0, MachineState::default()))),
                };
                (e.index, row)
            })
            .collect();
        HaltingApproximator { catalog, rows }
    }

    pub fn catalog(&self) -> &ProgramCatalog {
        &self.catalog
    }

    fn row(&self, i: u64) -> Option<&Row> {
        self.rows.iter().find(|(k, _)| *k == i).map(|(_, r)| r)
    }

    /// Halt step if it occurs within `s` steps.
    fn halts_within(&self, i: u64, s: u64) -> Option<u64> {
        match self.row(i)? {
            Row::HaltsAt(t) => (*t <= s).then_some(*t),
            Row::Never => None,
            Row::Simulate(m) => {
                let prog = &self.catalog.get(i).expect("row has a program").program;
                let mut guard = m.lock().expect("simulation state");
                let (reached, st) = *guard;
                if s <= reached {
                    return None;
                }
                match prog.resume(st, reached, s) {
                    RunOutcome::Halted { step } => Some(step),
                    RunOutcome::Running(st) => {
                        *guard = (s, st);
                        None
                    }
                }
            }
        }
    }
}

impl LimitApproximator for HaltingApproximator {
    fn name(&self) -> String {
        "halting".into()
    }

    fn approximate(&self, i: u64, s: u64) -> bool {
        self.halts_within(i, s).is_some()
    }

    fn change_points(&self, i: u64, from: u64, to: u64) -> Vec<u64> {
        if to <= from {
            return Vec::new();
        }
        match self.halts_within(i, to) {
            Some(t) if t > from => vec![t],
            _ => Vec::new(),
        }
    }
}

/// A set `A` of rationals named by its index set, with ground truth.
#[derive(Clone, Debug)]
pub enum TargetSet {
    /// `q_i` with `i` even.
    EvenIndices,
    /// `q_i` whose catalog program halts.
    HaltingCatalog(Arc<ProgramCatalog>),
    Decidable(IndexPredicate),
}

impl TargetSet {
    /// Resolves `even-indices`, `halting-catalog`, `decidable:<predicate>`
    /// or `indices:1,4,9`.
    pub fn parse(
        name: &str,
        catalog: Option<Arc<ProgramCatalog>>,
    ) -> Result<TargetSet, LimitError> {
        let name = name.trim();
        if name == "even-indices" {
            return Ok(TargetSet::EvenIndices);
        }
        if name == "halting-catalog" {
            let cat = catalog.unwrap_or_else(|| Arc::new(ProgramCatalog::builtin()));
            return Ok(TargetSet::HaltingCatalog(cat));
        }
        if let Some(p) = name.strip_prefix("decidable:") {
            return Ok(TargetSet::Decidable(IndexPredicate::parse(p)?));
        }
        if let Some(list) = name.strip_prefix("indices:") {
            return Ok(TargetSet::Decidable(IndexPredicate::Indices(
                parse_indices(list)?,
            )));
        }
        Err(LimitError::UnknownSet(name.to_string()))
    }

    pub fn name(&self) -> String {
        match self {
            TargetSet::EvenIndices => "even-indices".into(),
            TargetSet::HaltingCatalog(_) => "halting-catalog".into(),
            TargetSet::Decidable(IndexPredicate::Indices(s)) => {
                IndexPredicate::Indices(s.clone()).label()
            }
            TargetSet::Decidable(p) => format!("decidable:{}", p.label()),
        }
    }

    /// `1_{I_A}(i)`.
    pub fn contains_index(&self, i: u64) -> bool {
        match self {
            TargetSet::EvenIndices => i >= 1 && i.is_multiple_of(2),
            TargetSet::HaltingCatalog(cat) => cat.labeled_halting(i),
            TargetSet::Decidable(p) => p.holds(i),
        }
    }

    /// `1_A(mu)` for a rational mean. Rationals with indices beyond `u64`
    /// fall back to value predicates where those exist.
    pub fn contains(&self, q: &Rational) -> bool {
        match (self, index_of_u64(q)) {
            (TargetSet::Decidable(p), _) => p.holds_for(q),
            (_, Some(i)) => self.contains_index(i),
            (TargetSet::EvenIndices, None) => {
                // index_of is even iff q > 0 for q != 0
                q.is_positive()
            }
            (TargetSet::HaltingCatalog(_), None) => false,
        }
    }

    /// The approximator witnessing this set.
    pub fn default_approximator(&self) -> Arc<dyn LimitApproximator> {
        match self {
            TargetSet::EvenIndices => Arc::new(DecidableApproximator(IndexPredicate::EvenIndex)),
            TargetSet::HaltingCatalog(cat) => Arc::new(HaltingApproximator::new(cat.clone())),
            TargetSet::Decidable(p) => Arc::new(DecidableApproximator(p.clone())),
        }
    }
}

fn parse_indices(list: &str) -> Result<BTreeSet<u64>, LimitError> {
    let set: Result<BTreeSet<u64>, _> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().ok().filter(|&i| i >= 1).ok_or(()))
        .collect();
    match set {
        Ok(s) if !s.is_empty() => Ok(s),
        _ => Err(LimitError::IndexList(list.to_string())),
    }
}

/// Resolves an approximator name: `default` (the set's own witness),
/// `constant-0`, `constant-1`, `flip-once:<stage>`, `halting`,
/// `decidable:<predicate>` or `indices:<list>`.
pub fn resolve_approximator(
    name: &str,
    set: &TargetSet,
) -> Result<Arc<dyn LimitApproximator>, LimitError> {
    let name = name.trim();
    Ok(match name {
        "default" => set.default_approximator(),
        "constant-0" => Arc::new(ConstantApproximator(false)),
        "constant-1" => Arc::new(ConstantApproximator(true)),
        "halting" => match set {
            TargetSet::HaltingCatalog(cat) => Arc::new(HaltingApproximator::new(cat.clone())),
            _ => Arc::new(HaltingApproximator::new(
                Arc::new(ProgramCatalog::builtin()),
            )),
        },
        _ => {
            if let Some(stage) = name.strip_prefix("flip-once:") {
                let stage = stage
                    .parse()
                    .map_err(|_| LimitError::UnknownApproximator(name.to_string()))?;
                Arc::new(FlipOnceApproximator { stage })
            } else if let Some(p) = name.strip_prefix("decidable:") {
                Arc::new(DecidableApproximator(IndexPredicate::parse(p)?))
            } else if let Some(list) = name.strip_prefix("indices:") {
                Arc::new(DecidableApproximator(IndexPredicate::Indices(
                    parse_indices(list)?,
                )))
            } else {
                return Err(LimitError::UnknownApproximator(name.to_string()));
            }
        }
    })
}

/// Ground-truth halt step of catalog index `i`, if labeled halting.
pub fn catalog_halt_step(cat: &ProgramCatalog, i: u64) -> Option<u64> {
    match cat.get(i)?.truth {
        GroundTruth::HaltsAt(t) => Some(t),
        GroundTruth::Loops => None,
    }
}
