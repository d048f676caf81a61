//! Sequential membership tests `F = a o C`, trial execution with mistake
//! accounting, and the approximator a test induces on constant streams.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::enumeration::enumerate;
use crate::identifier::{
    DecisionRecord, DynSelector, EnumerationSelector, IdentifierConfig, IdentifierError, Selector,
    SequentialIdentifier,
};
use crate::limit::LimitApproximator;
use crate::rational::Rational;
use crate::reals::{CauchyPresentation, CertifiedSelector};
use crate::streams::ReadoutStream;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MembershipError {
    #[error(transparent)]
    Identifier(#[from] IdentifierError),
    #[error("horizon must be at least 1")]
    Horizon,
}

/// Bookkeeping over a verdict sequence `F_1, F_2, ...`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerdictLog {
    n: u64,
    ones: u64,
    last: Option<bool>,
    last_change: u64,
    changes: Option<Vec<u64>>,
}

impl VerdictLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also keeps every change position.
    pub fn recording_changes() -> Self {
        VerdictLog {
            changes: Some(Vec::new()),
            ..Self::default()
        }
    }

    /// Appends `len` copies of `bit`.
    pub fn push(&mut self, len: u64, bit: bool) {
        if len == 0 {
            return;
        }
        if self.last.is_some_and(|b| b != bit) {
            self.last_change = self.n + 1;
            if let Some(c) = self.changes.as_mut() {
                c.push(self.n + 1);
            }
        }
        self.n += len;
        if bit {
            self.ones += len;
        }
        self.last = Some(bit);
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn last(&self) -> Option<bool> {
        self.last
    }

    /// Largest `n` with `F_n != F_{n-1}`, or 0.
    pub fn last_change(&self) -> u64 {
        self.last_change
    }

    /// Number of `n` with `F_n != truth`.
    pub fn mistakes(&self, truth: bool) -> u64 {
        if truth {
            self.n - self.ones
        } else {
            self.ones
        }
    }

    pub fn changes(&self) -> Option<&[u64]> {
        self.changes.as_deref()
    }
}

/// A test evaluated one readout at a time.
pub trait SequentialTest: Send {
    fn name(&self) -> String;

    /// Feeds `count` copies of `x`, logging `F_n` for each new `n`.
    fn update_repeated(
        &mut self,
        x: &Rational,
        count: u64,
        log: &mut VerdictLog,
    ) -> Result<(), MembershipError>;

    /// Feeds one readout whose square the caller already knows.
    fn update_with_square(
        &mut self,
        x: &Rational,
        _x_sq: &Rational,
        log: &mut VerdictLog,
    ) -> Result<(), MembershipError> {
        self.update_repeated(x, 1, log)
    }

    fn samples_seen(&self) -> u64;

    /// The current verdict, false before any readout.
    fn verdict(&self) -> bool;

    /// The identifier output behind the verdict, if there is one.
    fn index(&self) -> Option<u64> {
        None
    }

    /// Sample count at which the identifier output last changed.
    fn index_last_change(&self) -> Option<u64> {
        None
    }

    fn take_trace(&mut self) -> Vec<DecisionRecord> {
        Vec::new()
    }

    fn update(&mut self, x: &Rational) -> Result<bool, MembershipError> {
        let mut log = VerdictLog::new();
        self.update_repeated(x, 1, &mut log)?;
        Ok(self.verdict())
    }
}

/// `F_n = b` for every `n`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstantTest {
    pub bit: bool,
    n: u64,
}

impl ConstantTest {
    pub fn new(bit: bool) -> Self {
        ConstantTest { bit, n: 0 }
    }
}

impl SequentialTest for ConstantTest {
    fn name(&self) -> String {
        format!("constant-{}", u8::from(self.bit))
    }

    fn update_repeated(
        &mut self,
        _x: &Rational,
        count: u64,
        log: &mut VerdictLog,
    ) -> Result<(), MembershipError> {
        self.n += count;
        log.push(count, self.bit);
        Ok(())
    }

    fn samples_seen(&self) -> u64 {
        self.n
    }

    fn verdict(&self) -> bool {
        self.n > 0 && self.bit
    }
}

/// `F_n = 0` if `C_n = 0`, else `a(C_n, n)`.
pub struct ComposedTest<S = DynSelector> {
    identifier: SequentialIdentifier<S>,
    approximator: Arc<dyn LimitApproximator>,
    index: u64,
    index_last_change: u64,
    verdict: bool,
}

/// Composes a fresh identifier with an approximator.
pub fn compose<S: Selector>(
    identifier: SequentialIdentifier<S>,
    approximator: Arc<dyn LimitApproximator>,
) -> ComposedTest<S> {
    assert_eq!(
        identifier.samples_seen(),
        0,
        "compose needs a fresh identifier"
    );
    ComposedTest {
        identifier,
        approximator,
        index: 0,
        index_last_change: 0,
        verdict: false,
    }
}

impl<S> ComposedTest<S> {
    pub fn identifier(&self) -> &SequentialIdentifier<S> {
        &self.identifier
    }

    pub fn approximator(&self) -> &dyn LimitApproximator {
        self.approximator.as_ref()
    }
}

impl<S: Selector> ComposedTest<S> {
    /// Logs `F` over `n+1..=end` while `C` stays fixed.
    fn hold(&mut self, n: u64, end: u64, log: &mut VerdictLog) {
        if self.index == 0 {
            log.push(end - n, false);
            self.verdict = false;
            return;
        }
        let mut v = self.verdict;
        let mut at = n;
        for cp in self.approximator.change_points(self.index, n, end) {
            log.push(cp - 1 - at, v);
            v = !v;
            at = cp - 1;
        }
        log.push(end - at, v);
        self.verdict = v;
    }

    /// Logs `F` at a decision time where `C` became `c`.
    fn decided(&mut self, c: u64, log: &mut VerdictLog) {
        let n = self.identifier.samples_seen();
        if c != self.index {
            self.index = c;
            self.index_last_change = n;
        }
        self.verdict = c != 0 && self.approximator.approximate(c, n);
        log.push(1, self.verdict);
    }
}

impl<S: Selector + Send> SequentialTest for ComposedTest<S> {
    fn name(&self) -> String {
        format!("composed({})", self.approximator.name())
    }

    fn update_repeated(
        &mut self,
        x: &Rational,
        count: u64,
        log: &mut VerdictLog,
    ) -> Result<(), MembershipError> {
        let mut left = count;
        while left > 0 {
            let n = self.identifier.samples_seen();
            let end = match self.identifier.next_decision_time() {
                Some(nd) => (nd - 1).min(n + left),
                None => n + left,
            };
            if end > n {
                self.identifier.observe_repeated(x, end - n)?;
                self.hold(n, end, log);
                left -= end - n;
            }
            if left > 0 {
                let c = self.identifier.observe(x)?;
                self.decided(c, log);
                left -= 1;
            }
        }
        Ok(())
    }

    fn update_with_square(
        &mut self,
        x: &Rational,
        x_sq: &Rational,
        log: &mut VerdictLog,
    ) -> Result<(), MembershipError> {
        let n = self.identifier.samples_seen();
        let decides = self.identifier.next_decision_time() == Some(n + 1);
        let c = self.identifier.observe_with_square(x, x_sq)?;
        if decides {
            self.decided(c, log);
        } else {
            self.hold(n, n + 1, log);
        }
        Ok(())
    }

    fn samples_seen(&self) -> u64 {
        self.identifier.samples_seen()
    }

    fn verdict(&self) -> bool {
        self.verdict
    }

    fn index(&self) -> Option<u64> {
        Some(self.index)
    }

    fn index_last_change(&self) -> Option<u64> {
        Some(self.index_last_change)
    }

    fn take_trace(&mut self) -> Vec<DecisionRecord> {
        self.identifier.take_trace()
    }
}

/// Which class the identifier searches.
#[derive(Clone)]
pub enum IdentifierClass {
    /// All rationals, in enumeration order.
    Rationals,
    /// A Cauchy-presented family, searched by certified inclusion.
    Family(Arc<dyn CauchyPresentation>),
}

impl fmt::Debug for IdentifierClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdentifierClass::Rationals => write!(f, "Rationals"),
            IdentifierClass::Family(p) => write!(f, "Family({})", p.name()),
        }
    }
}

/// Builds a fresh composed test.
pub fn composed_test(
    config: &IdentifierConfig,
    class: &IdentifierClass,
    approximator: Arc<dyn LimitApproximator>,
    trace: bool,
) -> Result<ComposedTest, MembershipError> {
    let selector: DynSelector = match class {
        IdentifierClass::Rationals => Box::new(EnumerationSelector),
        IdentifierClass::Family(p) => Box::new(CertifiedSelector::new(p.clone())),
    };
    let mut identifier = SequentialIdentifier::new(config.clone(), selector)?;
    if trace {
        identifier = identifier.with_trace();
    }
    Ok(compose(identifier, approximator))
}

/// Outcome of one trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub truth: bool,
    pub horizon: u64,
    pub mistakes: u64,
    pub last_change: u64,
    pub final_verdict: bool,
    pub stabilized_correct: bool,
    pub final_index: Option<u64>,
    pub index_last_change: Option<u64>,
}

/// Feeds `horizon` readouts into `test` and scores the verdicts against
/// `truth`. Constant streams are fed in bulk.
pub fn run_trial(
    test: &mut dyn SequentialTest,
    stream: &mut ReadoutStream,
    horizon: u64,
    truth: bool,
) -> Result<TrialRecord, MembershipError> {
    if horizon == 0 {
        return Err(MembershipError::Horizon);
    }
    let mut log = VerdictLog::new();
    if let Some(q) = stream.constant_value().cloned() {
        test.update_repeated(&q, horizon, &mut log)?;
    } else {
        for _ in 0..horizon {
            let (x, x_sq) = stream.next_readout_with_square();
            test.update_with_square(&x, &x_sq, &mut log)?;
        }
    }
    let final_verdict = test.verdict();
    Ok(TrialRecord {
        truth,
        horizon,
        mistakes: log.mistakes(truth),
        last_change: log.last_change(),
        final_verdict,
        stabilized_correct: final_verdict == truth,
        final_index: test.index(),
        index_last_change: test.index_last_change(),
    })
}

type TestFactory = dyn Fn() -> Box<dyn SequentialTest> + Send + Sync;

/// `a(i, n) = F_n(q_i, ..., q_i)`: the test run on `n` copies of `q_i`.
pub struct InducedApproximator {
    name: String,
    factory: Arc<TestFactory>,
}

impl InducedApproximator {
    /// `factory` must return a fresh test on every call.
    pub fn new(name: impl Into<String>, factory: Arc<TestFactory>) -> Self {
        InducedApproximator {
            name: name.into(),
            factory,
        }
    }

    /// The verdict log of row `i` over stages `1..=s`.
    pub fn row(&self, i: u64, s: u64) -> VerdictLog {
        let q = enumerate(i).expect("indices start at 1");
        let mut test = (self.factory)();
        let mut log = VerdictLog::recording_changes();
        test.update_repeated(&q, s, &mut log)
            .unwrap_or_else(|e| panic!("induced row {i}: {e}"));
        log
    }
}

impl fmt::Debug for InducedApproximator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InducedApproximator({})", self.name)
    }
}

impl LimitApproximator for InducedApproximator {
    fn name(&self) -> String {
        format!("induced({})", self.name)
    }

    fn approximate(&self, i: u64, s: u64) -> bool {
        self.row(i, s).last().unwrap_or(false)
    }

    fn change_points(&self, i: u64, from: u64, to: u64) -> Vec<u64> {
        if to <= from {
            return Vec::new();
        }
        let log = self.row(i, to);
        let mut out: Vec<u64> = log
            .changes()
            .unwrap_or_default()
            .iter()
            .copied()
            .filter(|&c| c > from)
            .collect();
        // a(i, 0) is false; a change at stage 1 means F_1 = 1
        if from == 0 && !log.is_empty() && self.row(i, 1).last() == Some(true) {
            out.insert(0, 1);
        }
        out
    }
}

/// The induced approximator of `compose(identifier, approximator)`.
pub fn induced_from_composition(
    config: IdentifierConfig,
    class: IdentifierClass,
    approximator: Arc<dyn LimitApproximator>,
) -> Result<InducedApproximator, MembershipError> {
    // fail early on a bad config
    composed_test(&config, &class, approximator.clone(), false)?;
    let name = approximator.name();
    let factory = move || -> Box<dyn SequentialTest> {
        Box::new(
            composed_test(&config, &class, approximator.clone(), false).expect("config validated"),
        )
    };
    Ok(InducedApproximator::new(name, Arc::new(factory)))
}
