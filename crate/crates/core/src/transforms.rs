//! The four 3-SAT → QUBO transformations and their clause gadgets.
//!
//! Formula variables keep their indices `0..n`; auxiliary bits follow at
//! `n..N`. All transformations superimpose per-clause gadgets in clause
//! order, so the formula energy is the sum of clause contributions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{normalize_clause, Assignment, Clause, Formula};
use crate::qubo::{quadratize, BinaryPolynomial, Qubo, QuboBuilder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("Chancellor coupling J must be at least 1, got {0}")]
    InvalidCoupling(f64),
    #[error("pattern for clause type {0} does not separate satisfying from unsatisfying assignments")]
    InvalidPattern(usize),
    #[error("pattern in slot {slot} is labelled type {found}")]
    PatternTypeMismatch { slot: usize, found: usize },
    #[error("bit vector has length {found}, transformation uses {expected} bits")]
    LengthMismatch { expected: usize, found: usize },
    #[error("unknown transformation {0:?} (expected chancellor-j1, chancellor-j5, algorithm or counttrue)")]
    UnknownTransform(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransformKind {
    #[serde(rename = "chancellor-j1")]
    ChancellorJ1,
    #[serde(rename = "chancellor-j5")]
    ChancellorJ5,
    #[serde(rename = "algorithm")]
    Algorithm,
    #[serde(rename = "counttrue")]
    CountTrue,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] = [
        TransformKind::ChancellorJ1,
        TransformKind::ChancellorJ5,
        TransformKind::Algorithm,
        TransformKind::CountTrue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::ChancellorJ1 => "chancellor-j1",
            TransformKind::ChancellorJ5 => "chancellor-j5",
            TransformKind::Algorithm => "algorithm",
            TransformKind::CountTrue => "counttrue",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = TransformError;
    fn from_str(s: &str) -> Result<Self, TransformError> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TransformError::UnknownTransform(s.to_string()))
    }
}

/// Where an auxiliary bit came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxOrigin {
    /// Per-clause ancilla.
    Clause(usize),
    /// Stands for the product `x_i x_j`.
    Pair(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformResult {
    pub qubo: Qubo,
    pub n_formula: usize,
    pub aux_map: BTreeMap<usize, AuxOrigin>,
    pub transform_name: String,
    /// Minimal energy each clause gadget can contribute. Their sum is a lower
    /// bound on the QUBO energy, reached exactly on satisfying assignments.
    pub clause_ground: Vec<f64>,
}

impl TransformResult {
    pub fn num_bits(&self) -> usize {
        self.qubo.size()
    }

    pub fn ground_energy_bound(&self) -> f64 {
        self.clause_ground.iter().sum()
    }
}

pub fn decode(r: &TransformResult, bits: &[bool]) -> Result<Assignment, TransformError> {
    if bits.len() != r.qubo.size() {
        return Err(TransformError::LengthMismatch { expected: r.qubo.size(), found: bits.len() });
    }
    Ok(Assignment(bits[..r.n_formula].to_vec()))
}

pub fn transform(f: &Formula, kind: TransformKind) -> TransformResult {
    match kind {
        TransformKind::ChancellorJ1 => chancellor(f, 1.0).expect("J = 1 is valid"),
        TransformKind::ChancellorJ5 => chancellor(f, 5.0).expect("J = 5 is valid"),
        TransformKind::Algorithm => {
            pattern_qubo(f, &PatternSet::algorithm()).expect("built-in patterns verify")
        }
        TransformKind::CountTrue => count_true(f),
    }
}

/// Minimum of a local 4-bit gadget over all 16 states.
fn gadget_min(q: &Qubo) -> f64 {
    (0..1u64 << q.size()).map(|i| q.energy_of_index(i)).fold(f64::INFINITY, f64::min)
}

/// Adds a local gadget over `(slot 0, slot 1, slot 2, slot 3)` into `out` with
/// slot `k` bound to global bit `vars[k]`.
fn superimpose(out: &mut QuboBuilder, local: &Qubo, vars: [usize; 4]) {
    out.add_offset(local.offset());
    for (k, &v) in local.diag().iter().enumerate() {
        out.add_linear(vars[k], v);
    }
    for &(a, b, v) in local.upper() {
        out.add_quadratic(vars[a], vars[b], v);
    }
}

fn spin(i: usize) -> BinaryPolynomial {
    // s = 2x - 1
    let mut p = BinaryPolynomial::constant(4, -1.0);
    p.add_term(&[i], 2.0);
    p
}

/// Chancellor clause gadget over local bits `(x1, x2, x3, aux)`.
///
/// `negated[k]` marks a negated literal (`c_k = -1`). The spin form
///
/// ```text
/// -7 - Σ c_i s_i + Σ_{i<j} c_i c_j s_i s_j
///    + J Σ_{i<j} s_i s_j - C Σ s_i + 2J Σ s_i s_a - 2C s_a,   C = c1 c2 c3
/// ```
///
/// is rewritten in bits with `s = 2x - 1`.
pub fn chancellor_gadget(negated: [bool; 3], j: f64) -> Qubo {
    let c = negated.map(|n| if n { -1.0 } else { 1.0 });
    let cc = c[0] * c[1] * c[2];
    let s: Vec<BinaryPolynomial> = (0..4).map(spin).collect();

    let mut h = BinaryPolynomial::constant(4, -7.0);
    for i in 0..3 {
        h.add(&s[i].scaled(-c[i] - cc));
        h.add(&s[i].mul(&s[3]).scaled(2.0 * j));
        for k in 0..i {
            h.add(&s[i].mul(&s[k]).scaled(c[i] * c[k] + j));
        }
    }
    h.add(&s[3].scaled(-2.0 * cc));
    h.to_qubo().expect("clause gadget is quadratic")
}

pub fn chancellor(f: &Formula, j: f64) -> Result<TransformResult, TransformError> {
    if !(j >= 1.0) {
        return Err(TransformError::InvalidCoupling(j));
    }
    let n = f.num_vars();
    let m = f.num_clauses();
    let mut out = QuboBuilder::new(n + m);
    let mut aux_map = BTreeMap::new();
    let mut clause_ground = Vec::with_capacity(m);
    // one gadget per sign pattern, indexed by the negation bitmask
    let gadgets: Vec<Qubo> = (0..8)
        .map(|mask| chancellor_gadget([mask & 1 != 0, mask & 2 != 0, mask & 4 != 0], j))
        .collect();

    for (ci, clause) in f.clauses().iter().enumerate() {
        let lits = clause.literals();
        let mask = lits.iter().enumerate().fold(0, |m, (k, l)| m | (l.negated as usize) << k);
        let aux = n + ci;
        superimpose(&mut out, &gadgets[mask], [lits[0].var, lits[1].var, lits[2].var, aux]);
        aux_map.insert(aux, AuxOrigin::Clause(ci));
        clause_ground.push(gadget_min(&gadgets[mask]));
    }

    Ok(TransformResult {
        qubo: out.build(),
        n_formula: n,
        aux_map,
        transform_name: format!("chancellor-j{j}"),
        clause_ground,
    })
}

/// 4×4 upper-triangular clause gadget over slots `(a, b, c, K)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternQubo {
    pub type_id: usize,
    pub entries: [[f64; 4]; 4],
}

impl PatternQubo {
    /// Builds from the ten upper-triangular cells in row-major order
    /// `(aa, ab, ac, aK, bb, bc, bK, cc, cK, KK)`.
    pub fn from_cells(type_id: usize, cells: [f64; 10]) -> Self {
        let mut entries = [[0.0; 4]; 4];
        let mut k = 0;
        for (i, row) in entries.iter_mut().enumerate() {
            for cell in row.iter_mut().skip(i) {
                *cell = cells[k];
                k += 1;
            }
        }
        PatternQubo { type_id, entries }
    }

    pub fn cells(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                out[k] = self.entries[i][j];
                k += 1;
            }
        }
        out
    }

    pub fn to_qubo(&self) -> Qubo {
        let mut b = QuboBuilder::new(4);
        for i in 0..4 {
            for j in i..4 {
                b.add_quadratic(i, j, self.entries[i][j]);
            }
        }
        b.build()
    }

    pub fn is_valid(&self) -> bool {
        verify_gadget(&self.to_qubo(), self.type_id)
    }
}

/// One pattern per clause type, indexed by type.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternSet(pub [PatternQubo; 4]);

impl PatternSet {
    /// The AlgorithmQUBO pattern set.
    pub fn algorithm() -> Self {
        //                           aa    ab    ac    aK    bb    bc    bK    cc    cK    KK
        PatternSet([
            PatternQubo::from_cells(0, [0.0, 1.0, 0.0, -1.0, 0.0, 0.0, -1.0, -1.0, 1.0, 0.0]),
            PatternQubo::from_cells(1, [0.0, 0.0, 0.0, -1.0, 0.0, -1.0, 1.0, 1.0, -1.0, 1.0]),
            PatternQubo::from_cells(2, [0.0, -1.0, 0.0, 1.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0]),
            PatternQubo::from_cells(3, [0.0, 0.0, 0.0, 1.0, 0.0, 1.0, -1.0, 0.0, -1.0, 1.0]),
        ])
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        for (slot, p) in self.0.iter().enumerate() {
            if p.type_id != slot {
                return Err(TransformError::PatternTypeMismatch { slot, found: p.type_id });
            }
            if !p.is_valid() {
                return Err(TransformError::InvalidPattern(slot));
            }
        }
        Ok(())
    }

    /// Parses `{"0": [[..4]; 4], "1": ..., "2": ..., "3": ...}`.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let map: BTreeMap<String, [[f64; 4]; 4]> = serde_json::from_str(text)?;
        let get = |t: usize| {
            map.get(&t.to_string())
                .map(|&entries| PatternQubo { type_id: t, entries })
                .ok_or_else(|| serde::de::Error::custom(format!("missing pattern for type {t}")))
        };
        Ok(PatternSet([get(0)?, get(1)?, get(2)?, get(3)?]))
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, [[f64; 4]; 4]> =
            self.0.iter().map(|p| (p.type_id.to_string(), p.entries)).collect();
        serde_json::to_string_pretty(&map).expect("plain data serializes")
    }
}

/// The single falsifying `(a, b, c)` of a clause type: positive slots 0,
/// negated (the last `type_id`) slots 1.
fn falsifier(type_id: usize) -> u64 {
    (0..3).filter(|&k| k >= 3 - type_id).fold(0, |m, k| m | 1 << k)
}

/// True iff, minimizing over the ancilla (bit 3), all seven satisfying
/// `(a, b, c)` share one energy and the falsifying one lies strictly above.
pub fn verify_gadget(q: &Qubo, type_id: usize) -> bool {
    if q.size() != 4 {
        return false;
    }
    let mut cells = [0.0; 10];
    let mut k = 0;
    for i in 0..4 {
        for j in i..4 {
            cells[k] = q.coefficient(i, j);
            k += 1;
        }
    }
    // the offset shifts every state equally
    verify_cells(&cells, type_id)
}

/// [`verify_gadget`] on the ten upper-triangular cells
/// `(aa, ab, ac, aK, bb, bc, bK, cc, cK, KK)`.
pub fn verify_cells(cells: &[f64; 10], type_id: usize) -> bool {
    if type_id > 3 {
        return false;
    }
    const TOL: f64 = 1e-9;
    const PAIRS: [(usize, usize); 10] =
        [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];
    let energy = |state: u32| {
        PAIRS
            .iter()
            .zip(cells)
            .filter(|(&(i, j), _)| state >> i & state >> j & 1 == 1)
            .map(|(_, v)| v)
            .sum::<f64>()
    };
    let min_over_k = |abc: u32| energy(abc).min(energy(abc | 8));
    let unsat = falsifier(type_id) as u32;
    let level = min_over_k(if unsat == 0 { 1 } else { 0 });
    (0..8u32)
        .filter(|&abc| abc != unsat)
        .all(|abc| (min_over_k(abc) - level).abs() <= TOL)
        && min_over_k(unsat) > level + TOL
}

/// Superimposes one pattern per clause, binding `(a, b, c)` to the clause's
/// variables in normalized order and `K` to a fresh ancilla `n + clause`.
pub fn pattern_qubo(f: &Formula, patterns: &PatternSet) -> Result<TransformResult, TransformError> {
    patterns.validate()?;
    let n = f.num_vars();
    let m = f.num_clauses();
    let locals: Vec<Qubo> = patterns.0.iter().map(PatternQubo::to_qubo).collect();
    let sat_min: Vec<f64> = locals.iter().map(gadget_min).collect();

    let mut out = QuboBuilder::new(n + m);
    let mut aux_map = BTreeMap::new();
    let mut clause_ground = Vec::with_capacity(m);
    for (ci, clause) in f.clauses().iter().enumerate() {
        let t = normalize_clause(clause);
        let [a, b, c] = t.ordered_vars;
        superimpose(&mut out, &locals[t.type_id], [a, b, c, n + ci]);
        aux_map.insert(n + ci, AuxOrigin::Clause(ci));
        clause_ground.push(sat_min[t.type_id]);
    }
    Ok(TransformResult {
        qubo: out.build(),
        n_formula: n,
        aux_map,
        transform_name: "algorithm".into(),
        clause_ground,
    })
}

/// `-(t - 1)(t - 2)(t - 3)` for one clause, `t` the number of true literals;
/// 6 when `t = 0`, 0 otherwise.
pub fn count_true_clause(clause: &Clause, num_vars: usize) -> BinaryPolynomial {
    let mut t = BinaryPolynomial::new(num_vars);
    for l in clause.literals() {
        // (1 - χ)/2 + χ x
        let chi = l.sign() as f64;
        t.add_term(&[], (1.0 - chi) / 2.0);
        t.add_term(&[l.var], chi);
    }
    let shifted = |k: f64| {
        let mut p = t.clone();
        p.add_term(&[], -k);
        p
    };
    shifted(1.0).mul(&shifted(2.0)).mul(&shifted(3.0)).scaled(-1.0)
}

/// The cubic CountTrue polynomial summed over all clauses.
pub fn count_true_polynomial(f: &Formula) -> BinaryPolynomial {
    let mut h = BinaryPolynomial::new(f.num_vars());
    for c in f.clauses() {
        h.add(&count_true_clause(c, f.num_vars()));
    }
    h
}

pub fn count_true(f: &Formula) -> TransformResult {
    let reduced = quadratize(&count_true_polynomial(f));
    let aux_map = reduced
        .pair_aux
        .iter()
        .map(|(&(i, j), &aux)| (aux, AuxOrigin::Pair(i, j)))
        .collect();
    TransformResult {
        qubo: reduced.qubo,
        n_formula: f.num_vars(),
        aux_map,
        transform_name: "counttrue".into(),
        clause_ground: vec![0.0; f.num_clauses()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{parse_dimacs, Literal};

    fn min_over_k(q: &Qubo, abc: u64) -> f64 {
        q.energy_of_index(abc).min(q.energy_of_index(abc | 8))
    }

    #[test]
    fn algorithm_patterns_separate() {
        let set = PatternSet::algorithm();
        let expected_sat = [-1.0, 0.0, 0.0, 0.0];
        for (t, p) in set.0.iter().enumerate() {
            assert!(p.is_valid(), "type {t}");
            let q = p.to_qubo();
            let unsat = falsifier(t);
            for abc in 0..8 {
                let want = if abc == unsat { expected_sat[t] + 1.0 } else { expected_sat[t] };
                assert_eq!(min_over_k(&q, abc), want, "type {t} abc {abc:03b}");
            }
        }
    }

    #[test]
    fn verify_gadget_rejections() {
        assert!(!verify_gadget(&Qubo::zeros(4), 0));
        let type0 = PatternSet::algorithm().0[0].to_qubo();
        assert!(!verify_gadget(&type0, 3));
        assert!(!verify_gadget(&Qubo::zeros(3), 0));
    }

    #[test]
    fn chancellor_all_positive_j1() {
        let q = chancellor_gadget([false; 3], 1.0);
        let mins: Vec<f64> = (0..8).map(|abc| min_over_k(&q, abc)).collect();
        assert_eq!(mins[0], -3.0);
        assert!(mins[1..].iter().all(|&e| e == -11.0));
    }

    #[test]
    fn cubic_replacement_is_a_parity_check() {
        // I_cubic alone for c = (1, 1, 1), J = 1, evaluated in spin form
        let j = 1.0;
        for idx in 0..8 {
            let s: Vec<f64> = (0..3).map(|k| if idx >> k & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let e = |sa: f64| {
                j * (s[0] * s[1] + s[0] * s[2] + s[1] * s[2]) - (s[0] + s[1] + s[2])
                    + 2.0 * j * (s[0] + s[1] + s[2]) * sa
                    - 2.0 * sa
            };
            let min = e(1.0).min(e(-1.0));
            let ones = (idx as u32).count_ones();
            assert_eq!(min, if ones % 2 == 1 { -4.0 } else { -2.0 });
        }
    }

    #[test]
    fn chancellor_bit_count_and_validation() {
        let f = crate::cnf::generate_random(11, 46, 1).unwrap();
        let r = chancellor(&f, 1.0).unwrap();
        assert_eq!(r.num_bits(), 57);
        assert_eq!(r.aux_map.len(), 46);
        assert!(matches!(chancellor(&f, 0.5), Err(TransformError::InvalidCoupling(_))));
        assert!(matches!(chancellor(&f, f64::NAN), Err(TransformError::InvalidCoupling(_))));
    }

    #[test]
    fn count_true_clause_values() {
        let c = Clause::new([Literal::pos(0), Literal::neg(1), Literal::pos(2)]).unwrap();
        let h = count_true_clause(&c, 3);
        for idx in 0..8u64 {
            let x: Vec<bool> = (0..3).map(|k| idx >> k & 1 == 1).collect();
            let t = c.literals().iter().filter(|l| l.eval(&x)).count();
            let want = if t == 0 { 6.0 } else { 0.0 };
            assert_eq!(h.evaluate(&x).unwrap(), want);
        }
    }

    #[test]
    fn count_true_positive_clause_form() {
        let c = Clause::new([Literal::pos(0), Literal::pos(1), Literal::pos(2)]).unwrap();
        let h = count_true_clause(&c, 3);
        let mut want = BinaryPolynomial::new(3);
        want.add_term(&[], 6.0);
        for i in 0..3 {
            want.add_term(&[i], -6.0);
            for j in i + 1..3 {
                want.add_term(&[i, j], 6.0);
            }
        }
        want.add_term(&[0, 1, 2], -6.0);
        assert_eq!(h, want);
    }

    #[test]
    fn count_true_phi0_zero_energy() {
        let f = parse_dimacs("p cnf 5 4\n1 2 -3 0\n-1 2 3 0\n-1 2 3 0\n1 -4 5 0\n").unwrap();
        let r = count_true(&f);
        let mut bits = vec![false, true, true, true, true];
        bits.resize(r.num_bits(), false);
        for (&aux, origin) in &r.aux_map {
            let AuxOrigin::Pair(i, j) = *origin else { panic!() };
            bits[aux] = bits[i] && bits[j];
        }
        assert_eq!(r.qubo.energy(&bits).unwrap(), 0.0);
        assert!(r.num_bits() <= 5 + 4);
    }

    #[test]
    fn decode_is_a_prefix() {
        let f = crate::cnf::generate_random(11, 46, 2).unwrap();
        let r = transform(&f, TransformKind::Algorithm);
        let bits = vec![true; 57];
        assert_eq!(decode(&r, &bits).unwrap().len(), 11);
        assert!(matches!(decode(&r, &bits[..10]), Err(TransformError::LengthMismatch { .. })));
    }

    #[test]
    fn transform_names_roundtrip() {
        for k in TransformKind::ALL {
            assert_eq!(k.name().parse::<TransformKind>().unwrap(), k);
            let f = crate::cnf::generate_random(4, 3, 0).unwrap();
            assert_eq!(transform(&f, k).transform_name, k.name());
        }
        assert!("dwave".parse::<TransformKind>().is_err());
    }

    #[test]
    fn pattern_set_json() {
        let set = PatternSet::algorithm();
        assert_eq!(PatternSet::from_json(&set.to_json()).unwrap(), set);
        assert!(PatternSet::from_json(r#"{"0": [[0,0,0,0],[0,0,0,0],[0,0,0,0],[0,0,0,0]]}"#).is_err());

        let mut bad = set.clone();
        bad.0[2].entries = [[0.0; 4]; 4];
        let f = crate::cnf::generate_random(4, 3, 0).unwrap();
        assert!(matches!(pattern_qubo(&f, &bad), Err(TransformError::InvalidPattern(2))));
        let mut swapped = set;
        swapped.0.swap(0, 1);
        assert!(matches!(
            pattern_qubo(&f, &swapped),
            Err(TransformError::PatternTypeMismatch { slot: 0, found: 1 })
        ));
    }
}
