//! A two-counter register machine and the built-in program catalog.
//!
//! Program text has one instruction per line:
//!
//! ```text
//! inc C      # counter C += 1, continue
//! dec C L    # if counter C > 0: C -= 1 and continue, else jump to line L
//! halt
//! ```
//!
//! `C` is 0 or 1 and `L` counts instructions from 0 (blank lines and
//! comments do not count). Both counters start at zero. Executing one
//! instruction is one step, including the final `halt`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("empty program")]
    Empty,
    #[error("instruction {0} can fall through past the end of the program")]
    FallsOff(usize),
    #[error("catalog: {0}")]
    Catalog(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Instruction {
    Inc(usize),
    Dec(usize, usize),
    Halt,
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Inc(c) => write!(f, "inc {c}"),
            Instruction::Dec(c, l) => write!(f, "dec {c} {l}"),
            Instruction::Halt => write!(f, "halt"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    code: Vec<Instruction>,
}

fn parse_counter(tok: Option<&str>, line: usize) -> Result<usize, MachineError> {
    let err = |msg: &str| MachineError::Syntax {
        line,
        msg: msg.to_string(),
    };
    match tok.ok_or_else(|| err("missing counter"))? {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(err(&format!("counter must be 0 or 1, got `{other}`"))),
    }
}

impl Program {
    pub fn parse(text: &str) -> Result<Program, MachineError> {
        let mut code = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut toks = body.split_whitespace();
            let op = toks.next().expect("non-empty line");
            let ins = match op {
                "inc" => Instruction::Inc(parse_counter(toks.next(), line)?),
                "dec" => {
                    let c = parse_counter(toks.next(), line)?;
                    let target = toks
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| MachineError::Syntax {
                            line,
                            msg: "dec needs a jump target".into(),
                        })?;
                    Instruction::Dec(c, target)
                }
                "halt" => Instruction::Halt,
                other => {
                    return Err(MachineError::Syntax {
                        line,
                        msg: format!("unknown instruction `{other}`"),
                    })
                }
            };
            if toks.next().is_some() {
                return Err(MachineError::Syntax {
                    line,
                    msg: "trailing tokens".into(),
                });
            }
            code.push(ins);
        }
        Self::from_instructions(code)
    }

    pub fn from_instructions(code: Vec<Instruction>) -> Result<Program, MachineError> {
        if code.is_empty() {
            return Err(MachineError::Empty);
        }
        let len = code.len();
        for (pc, ins) in code.iter().enumerate() {
            match ins {
                Instruction::Inc(_) if pc + 1 == len => return Err(MachineError::FallsOff(pc)),
                Instruction::Dec(_, l) if *l >= len => {
                    return Err(MachineError::Syntax {
                        line: pc,
                        msg: format!("jump target {l} out of range"),
                    })
                }
                Instruction::Dec(_, _) if pc + 1 == len => return Err(MachineError::FallsOff(pc)),
                _ => {}
            }
        }
        Ok(Program { code })
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.code
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ins in &self.code {
            writeln!(f, "{ins}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MachineState {
    pub pc: usize,
    pub counters: [u64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    /// `halt` was executed as instruction number `step`.
    Halted { step: u64 },
    /// Still running after the step budget.
    Running(MachineState),
}

impl Program {
    fn exec(&self, st: &mut MachineState) -> bool {
        match self.code[st.pc] {
            Instruction::Inc(c) => {
                st.counters[c] += 1;
                st.pc += 1;
            }
            Instruction::Dec(c, l) => {
                if st.counters[c] > 0 {
                    st.counters[c] -= 1;
                    st.pc += 1;
                } else {
                    st.pc = l;
                }
            }
            Instruction::Halt => return true,
        }
        false
    }

    /// Runs at most `max_steps` instructions from the zero state.
    pub fn run_bounded(&self, max_steps: u64) -> RunOutcome {
        self.resume(MachineState::default(), 0, max_steps)
    }

    /// Continues from `st`, reached after `done` steps, up to `max_steps`.
    pub fn resume(&self, mut st: MachineState, done: u64, max_steps: u64) -> RunOutcome {
        for step in done + 1..=max_steps {
            if self.exec(&mut st) {
                return RunOutcome::Halted { step };
            }
        }
        RunOutcome::Running(st)
    }
}

/// How a program was shown to run forever.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoopProof {
    /// No `halt` is reachable in the control-flow graph once counters that
    /// are never incremented are treated as constant zero.
    HaltUnreachable,
    /// The machine revisits a state.
    StateCycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fate {
    Halts(u64),
    Loops(LoopProof),
    Unknown,
}

fn halt_reachable(p: &Program) -> bool {
    let mut incremented = [false; 2];
    for ins in &p.code {
        if let Instruction::Inc(c) = ins {
            incremented[*c] = true;
        }
    }
    let mut seen = vec![false; p.code.len()];
    let mut stack = vec![0usize];
    while let Some(pc) = stack.pop() {
        if std::mem::replace(&mut seen[pc], true) {
            continue;
        }
        match p.code[pc] {
            Instruction::Halt => return true,
            Instruction::Inc(_) => stack.push(pc + 1),
            Instruction::Dec(c, l) => {
                stack.push(l);
                if incremented[c] {
                    stack.push(pc + 1);
                }
            }
        }
    }
    false
}

/// Decides the program's fate where a sound shortcut applies: halting
/// within `max_steps`, an unreachable `halt`, or a repeated state (Brent's
/// cycle detection).
pub fn analyze(p: &Program, max_steps: u64) -> Fate {
    if !halt_reachable(p) {
        return Fate::Loops(LoopProof::HaltUnreachable);
    }
    let mut st = MachineState::default();
    let mut saved = st;
    let mut power = 1u64;
    let mut lam = 0u64;
    for step in 1..=max_steps {
        if p.exec(&mut st) {
            return Fate::Halts(step);
        }
        lam += 1;
        if st == saved {
            return Fate::Loops(LoopProof::StateCycle);
        }
        if lam == power {
            saved = st;
            power *= 2;
            lam = 0;
        }
    }
    Fate::Unknown
}

/// Ground truth attached to a catalog program by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundTruth {
    HaltsAt(u64),
    Loops,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CatalogEntry {
    pub index: u64,
    pub program: Program,
    pub truth: GroundTruth,
    pub description: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    index: u64,
    truth: String,
    halt_step: Option<u64>,
    #[serde(default)]
    description: String,
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    program: Vec<RawEntry>,
}

/// Programs attached to enumeration indices. Indices outside the catalog
/// have no program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramCatalog {
    entries: BTreeMap<u64, CatalogEntry>,
}

const BUILTIN_CATALOG: &str = include_str!("../data/halting_catalog.toml");

impl ProgramCatalog {
    /// The eight-program catalog shipped with the crate.
    pub fn builtin() -> ProgramCatalog {
        Self::from_toml(BUILTIN_CATALOG).expect("built-in catalog is valid")
    }

    pub fn from_toml(text: &str) -> Result<ProgramCatalog, MachineError> {
        let raw: RawCatalog =
            toml::from_str(text).map_err(|e| MachineError::Catalog(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for e in raw.program {
            if e.index == 0 {
                return Err(MachineError::Catalog("indices start at 1".into()));
            }
            let truth = match (e.truth.as_str(), e.halt_step) {
                ("halts", Some(t)) if t >= 1 => GroundTruth::HaltsAt(t),
                ("loops", None) => GroundTruth::Loops,
                _ => return Err(MachineError::Catalog(format!(
                    "index {}: truth must be `halts` with a halt_step >= 1 or `loops` without one",
                    e.index
                ))),
            };
            let program = Program::parse(&e.text)?;
            let entry = CatalogEntry {
                index: e.index,
                program,
                truth,
                description: e.description,
            };
            if entries.insert(e.index, entry).is_some() {
                return Err(MachineError::Catalog(format!(
                    "duplicate index {}",
                    e.index
                )));
            }
        }
        Ok(ProgramCatalog { entries })
    }

    pub fn load(path: &Path) -> Result<ProgramCatalog, MachineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MachineError::Catalog(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn get(&self, index: u64) -> Option<&CatalogEntry> {
        self.entries.get(&index)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether index `i` carries a program labeled as halting.
    pub fn labeled_halting(&self, i: u64) -> bool {
        matches!(self.get(i).map(|e| e.truth), Some(GroundTruth::HaltsAt(_)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_validate() {
        let p = Program::parse("inc 0\n# comment\n\ndec 0 2 # trailing\nhalt").unwrap();
        assert_eq!(
            p.instructions(),
            &[
                Instruction::Inc(0),
                Instruction::Dec(0, 2),
                Instruction::Halt
            ]
        );
        assert!(matches!(
            Program::parse("inc 2\nhalt"),
            Err(MachineError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            Program::parse("dec 0 9\nhalt"),
            Err(MachineError::Syntax { .. })
        ));
        assert_eq!(
            Program::parse("halt\ninc 0"),
            Err(MachineError::FallsOff(1))
        );
        assert_eq!(Program::parse("# nothing"), Err(MachineError::Empty));
        assert!(Program::parse("jmp 3\nhalt").is_err());
    }

    #[test]
    fn step_counting() {
        let p = Program::parse("halt").unwrap();
        assert_eq!(p.run_bounded(1), RunOutcome::Halted { step: 1 });
        assert!(matches!(p.run_bounded(0), RunOutcome::Running(_)));
        // 3 increments then halt: halts at step 4
        let p = Program::parse("inc 0\ninc 0\ninc 1\nhalt").unwrap();
        assert_eq!(
            p.run_bounded(3),
            RunOutcome::Running(MachineState {
                pc: 3,
                counters: [2, 1]
            })
        );
        assert_eq!(p.run_bounded(10), RunOutcome::Halted { step: 4 });
    }

    #[test]
    fn builtin_catalog_labels_hold() {
        let cat = ProgramCatalog::builtin();
        assert_eq!(cat.len(), 8);
        let mut halting = 0;
        for e in cat.entries() {
            match e.truth {
                GroundTruth::HaltsAt(t) => {
                    halting += 1;
                    assert!(t <= 1000);
                    assert_eq!(e.program.run_bounded(t), RunOutcome::Halted { step: t });
                    assert!(matches!(
                        e.program.run_bounded(t - 1),
                        RunOutcome::Running(_)
                    ));
                    assert_eq!(analyze(&e.program, 10_000), Fate::Halts(t));
                }
                GroundTruth::Loops => {
                    assert!(matches!(
                        e.program.run_bounded(100_000),
                        RunOutcome::Running(_)
                    ));
                    assert!(
                        matches!(analyze(&e.program, 10_000), Fate::Loops(_)),
                        "index {}",
                        e.index
                    );
                }
            }
        }
        assert_eq!(halting, 4);
        assert_eq!(cat.get(5).unwrap().truth, GroundTruth::HaltsAt(57));
    }

    #[test]
    fn both_loop_proofs_are_exercised() {
        let cat = ProgramCatalog::builtin();
        let proofs: Vec<Fate> = [2u64, 4, 6, 7]
            .iter()
            .map(|&i| analyze(&cat.get(i).unwrap().program, 10_000))
            .collect();
        assert!(proofs.contains(&Fate::Loops(LoopProof::StateCycle)));
        assert!(proofs.contains(&Fate::Loops(LoopProof::HaltUnreachable)));
    }

    #[test]
    fn unknown_when_budget_is_short() {
        // counts to 2000 before halting
        let mut text = String::new();
        text.push_str("inc 0\n".repeat(2000).as_str());
        text.push_str("halt\n");
        let p = Program::parse(&text).unwrap();
        assert_eq!(analyze(&p, 100), Fate::Unknown);
        assert_eq!(analyze(&p, 5000), Fate::Halts(2001));
    }

    #[test]
    fn catalog_rejects_bad_labels() {
        let bad = "[[program]]\nindex = 1\ntruth = \"halts\"\ntext = \"halt\"\n";
        assert!(ProgramCatalog::from_toml(bad).is_err());
        let dup = "[[program]]\nindex = 1\ntruth = \"loops\"\ntext = \"dec 0 0\\nhalt\"\n\
                   [[program]]\nindex = 1\ntruth = \"loops\"\ntext = \"dec 0 0\\nhalt\"\n";
        assert!(ProgramCatalog::from_toml(dup).is_err());
    }
}
