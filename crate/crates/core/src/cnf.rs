//! 3-CNF formulas: model, DIMACS I/O, seeded generation and exhaustive
//! satisfiability checking.

use std::fmt;
use std::fmt::Write as _;

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Exec};

/// Largest variable count accepted by [`exhaustive_sat`].
pub const EXHAUSTIVE_MAX_VARS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CnfError {
    #[error("missing `p cnf` header")]
    MissingHeader,
    #[error("malformed header on line {line}: {text:?}")]
    MalformedHeader { line: usize, text: String },
    #[error("unexpected token {token:?} on line {line}")]
    BadToken { line: usize, token: String },
    #[error("clause {clause} has {len} literals, expected 3")]
    ClauseLength { clause: usize, len: usize },
    #[error("clause {clause} repeats variable {var}")]
    RepeatedVariable { clause: usize, var: usize },
    #[error("clause {clause} references variable {var} but the formula has {n} variables")]
    VariableOutOfRange { clause: usize, var: usize, n: usize },
    #[error("header declares {expected} clauses, found {found}")]
    ClauseCountMismatch { expected: usize, found: usize },
    #[error("a 3-SAT formula needs at least 3 variables, got {0}")]
    TooFewVariables(usize),
    #[error("formula has no clauses")]
    NoClauses,
    #[error("assignment has {found} bits, formula has {expected} variables")]
    AssignmentLength { expected: usize, found: usize },
    #[error("exhaustive search limited to {max} variables, formula has {n}")]
    TooLarge { n: usize, max: usize },
}

/// A signed occurrence of a variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub var: usize,
    pub negated: bool,
}

impl Literal {
    pub fn pos(var: usize) -> Self {
        Literal { var, negated: false }
    }

    pub fn neg(var: usize) -> Self {
        Literal { var, negated: true }
    }

    /// +1 for `x`, -1 for `¬x`.
    pub fn sign(self) -> i32 {
        if self.negated {
            -1
        } else {
            1
        }
    }

    pub fn eval(self, bits: &[bool]) -> bool {
        bits[self.var] != self.negated
    }

    fn from_dimacs(v: i64) -> Self {
        let var = (v.unsigned_abs() - 1) as usize;
        Literal { var, negated: v < 0 }
    }

    fn to_dimacs(self) -> i64 {
        let v = self.var as i64 + 1;
        if self.negated {
            -v
        } else {
            v
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "¬x{}", self.var)
        } else {
            write!(f, "x{}", self.var)
        }
    }
}

/// Three literals over pairwise distinct variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[Literal; 3]", into = "[Literal; 3]")]
pub struct Clause([Literal; 3]);

impl Clause {
    pub fn new(lits: [Literal; 3]) -> Result<Self, CnfError> {
        Self::checked(lits, 0)
    }

    fn checked(lits: [Literal; 3], clause: usize) -> Result<Self, CnfError> {
        for i in 0..3 {
            for j in 0..i {
                if lits[i].var == lits[j].var {
                    return Err(CnfError::RepeatedVariable { clause, var: lits[i].var });
                }
            }
        }
        Ok(Clause(lits))
    }

    pub fn literals(&self) -> &[Literal; 3] {
        &self.0
    }

    pub fn is_satisfied(&self, bits: &[bool]) -> bool {
        self.0.iter().any(|l| l.eval(bits))
    }

    /// Number of negated literals; this is the clause type.
    pub fn negations(&self) -> usize {
        self.0.iter().filter(|l| l.negated).count()
    }
}

impl TryFrom<[Literal; 3]> for Clause {
    type Error = CnfError;
    fn try_from(lits: [Literal; 3]) -> Result<Self, CnfError> {
        Clause::new(lits)
    }
}

impl From<Clause> for [Literal; 3] {
    fn from(c: Clause) -> Self {
        c.0
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.0;
        write!(f, "({a} ∨ {b} ∨ {c})")
    }
}

/// Clause reordered so that positive literals precede negated ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClauseType {
    pub type_id: usize,
    pub ordered_vars: [usize; 3],
}

/// Stable reorder of a clause: positive literals first, original order kept
/// inside each group.
pub fn normalize_clause(c: &Clause) -> ClauseType {
    let mut ordered = *c.literals();
    // stable sort keeps relative order within the sign groups
    ordered.sort_by_key(|l| l.negated);
    ClauseType {
        type_id: c.negations(),
        ordered_vars: ordered.map(|l| l.var),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formula {
    n: usize,
    clauses: Vec<Clause>,
}

impl Formula {
    pub fn new(n: usize, clauses: Vec<Clause>) -> Result<Self, CnfError> {
        if n < 3 {
            return Err(CnfError::TooFewVariables(n));
        }
        if clauses.is_empty() {
            return Err(CnfError::NoClauses);
        }
        for (ci, c) in clauses.iter().enumerate() {
            for l in c.literals() {
                if l.var >= n {
                    return Err(CnfError::VariableOutOfRange { clause: ci, var: l.var, n });
                }
            }
        }
        Ok(Formula { n, clauses })
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn ratio(&self) -> f64 {
        self.clauses.len() as f64 / self.n as f64
    }
}

/// A truth assignment; `bits[i]` is the value of variable `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment(pub Vec<bool>);

impl Assignment {
    pub fn from_index(index: u64, n: usize) -> Self {
        Assignment((0..n).map(|i| (index >> i) & 1 == 1).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_char(if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

pub fn parse_dimacs(text: &str) -> Result<Formula, CnfError> {
    let mut header: Option<(usize, usize)> = None;
    let mut clauses = Vec::new();
    let mut current: Vec<i64> = Vec::with_capacity(3);

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('c') {
            continue;
        }
        // SATLIB files end with a `%` line followed by a stray 0
        if trimmed.starts_with('%') {
            break;
        }
        if trimmed.starts_with('p') {
            if header.is_some() {
                return Err(CnfError::MalformedHeader { line: lineno, text: trimmed.to_string() });
            }
            header = Some(parse_header(trimmed, lineno)?);
            continue;
        }
        let Some((n, _)) = header else {
            return Err(CnfError::MissingHeader);
        };
        for tok in trimmed.split_whitespace() {
            let v: i64 = tok.parse().map_err(|_| CnfError::BadToken {
                line: lineno,
                token: tok.to_string(),
            })?;
            if v != 0 {
                current.push(v);
                continue;
            }
            let ci = clauses.len();
            if current.len() != 3 {
                return Err(CnfError::ClauseLength { clause: ci, len: current.len() });
            }
            let lits = [current[0], current[1], current[2]].map(Literal::from_dimacs);
            for l in &lits {
                if l.var >= n {
                    return Err(CnfError::VariableOutOfRange { clause: ci, var: l.var, n });
                }
            }
            clauses.push(Clause::checked(lits, ci)?);
            current.clear();
        }
    }

    let (n, m) = header.ok_or(CnfError::MissingHeader)?;
    if !current.is_empty() {
        return Err(CnfError::ClauseLength { clause: clauses.len(), len: current.len() });
    }
    if clauses.len() != m {
        return Err(CnfError::ClauseCountMismatch { expected: m, found: clauses.len() });
    }
    Formula::new(n, clauses)
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, usize), CnfError> {
    let bad = || CnfError::MalformedHeader { line: lineno, text: line.to_string() };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "p" || fields[1] != "cnf" {
        return Err(bad());
    }
    let n = fields[2].parse().map_err(|_| bad())?;
    let m = fields[3].parse().map_err(|_| bad())?;
    Ok((n, m))
}

pub fn write_dimacs(f: &Formula) -> String {
    let mut out = String::with_capacity(16 + f.clauses.len() * 12);
    let _ = writeln!(out, "p cnf {} {}", f.n, f.clauses.len());
    for c in &f.clauses {
        let [a, b, d] = c.literals().map(Literal::to_dimacs);
        let _ = writeln!(out, "{a} {b} {d} 0");
    }
    out
}

/// Uniform random 3-SAT.
///
/// The stream is SplitMix64 seeded with `seed` (state starts at `seed`, each
/// output adds `0x9E3779B97F4A7C15` and applies the standard finalizer).
/// For every clause, three literals are drawn in turn:
///
/// * variable: draw `z`, reject while `z >= 2^64 - (2^64 mod n)`, take
///   `z mod n`; redraw the variable if it already occurs in the clause;
/// * sign: one more draw, negated iff its top bit is set.
pub fn generate_random(n: usize, m: usize, seed: u64) -> Result<Formula, CnfError> {
    if n < 3 {
        return Err(CnfError::TooFewVariables(n));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let bound = n as u64;
    let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
    let draw_var = |rng: &mut SplitMix64| loop {
        let z = rng.next_u64();
        if z <= zone {
            break (z % bound) as usize;
        }
    };

    let mut clauses = Vec::with_capacity(m);
    for _ in 0..m {
        let mut lits = [Literal::pos(0); 3];
        for k in 0..3 {
            let var = loop {
                let v = draw_var(&mut rng);
                if lits[..k].iter().all(|l| l.var != v) {
                    break v;
                }
            };
            let negated = rng.next_u64() >> 63 == 1;
            lits[k] = Literal { var, negated };
        }
        clauses.push(Clause(lits));
    }
    Formula::new(n, clauses)
}

pub fn violated_count(f: &Formula, a: &Assignment) -> Result<usize, CnfError> {
    if a.len() != f.n {
        return Err(CnfError::AssignmentLength { expected: f.n, found: a.len() });
    }
    Ok(f.clauses.iter().filter(|c| !c.is_satisfied(a.bits())).count())
}

pub fn is_satisfied_by(f: &Formula, a: &Assignment) -> bool {
    matches!(violated_count(f, a), Ok(0))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SatReport {
    pub satisfiable: bool,
    /// The satisfying assignment with the smallest index (bit `i` = variable `i`).
    pub witness: Option<Assignment>,
    pub solution_count: u64,
}

/// Clause as a pair of masks: violated iff `x & mask == falsifier`.
fn clause_masks(f: &Formula) -> Vec<(u64, u64)> {
    f.clauses
        .iter()
        .map(|c| {
            c.literals().iter().fold((0u64, 0u64), |(mask, fal), l| {
                let bit = 1u64 << l.var;
                (mask | bit, if l.negated { fal | bit } else { fal })
            })
        })
        .collect()
}

pub fn exhaustive_sat(f: &Formula) -> Result<SatReport, CnfError> {
    exhaustive_sat_with(f, Exec::default())
}

pub fn exhaustive_sat_with(f: &Formula, exec: Exec) -> Result<SatReport, CnfError> {
    if f.n > EXHAUSTIVE_MAX_VARS {
        return Err(CnfError::TooLarge { n: f.n, max: EXHAUSTIVE_MAX_VARS });
    }
    let masks = clause_masks(f);
    let total = 1u64 << f.n;
    let chunk = 1u64 << 16.min(f.n);
    let chunks = (total / chunk) as usize;

    let partial = par::map_range(exec, chunks, |ci| {
        let start = ci as u64 * chunk;
        let mut count = 0u64;
        let mut first = None;
        for x in start..start + chunk {
            if masks.iter().all(|&(mask, fal)| x & mask != fal) {
                count += 1;
                first.get_or_insert(x);
            }
        }
        (count, first)
    });

    let solution_count = partial.iter().map(|p| p.0).sum();
    let witness = partial
        .iter()
        .find_map(|p| p.1)
        .map(|x| Assignment::from_index(x, f.n));
    Ok(SatReport { satisfiable: witness.is_some(), witness, solution_count })
}

/// Every satisfying assignment, as bit indices in ascending order.
pub fn all_solutions(f: &Formula) -> Result<Vec<u64>, CnfError> {
    if f.n > EXHAUSTIVE_MAX_VARS {
        return Err(CnfError::TooLarge { n: f.n, max: EXHAUSTIVE_MAX_VARS });
    }
    let masks = clause_masks(f);
    Ok((0..1u64 << f.n)
        .filter(|&x| masks.iter().all(|&(mask, fal)| x & mask != fal))
        .collect())
}
