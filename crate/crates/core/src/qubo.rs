//! QUBO and higher-order binary polynomial models.
//!
//! A [`Qubo`] is an upper-triangular coefficient matrix plus a constant
//! offset. It is assembled with a [`QuboBuilder`] and frozen afterwards; the
//! frozen form keeps a symmetric neighbour list so single-bit flip deltas
//! cost `O(degree)`.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuboError {
    #[error("bit vector has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for {size} bits")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("unsupported precision {0}, expected 16 or 64")]
    InvalidPrecision(u32),
    #[error("polynomial has degree {0}, quadratize it first")]
    NotQuadratic(usize),
    #[error("malformed QUBO text on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid QUBO: {0}")]
    Invalid(String),
}

/// Mutable accumulator for QUBO coefficients.
#[derive(Clone, Debug, Default)]
pub struct QuboBuilder {
    size: usize,
    diag: Vec<f64>,
    upper: BTreeMap<(usize, usize), f64>,
    offset: f64,
}

impl QuboBuilder {
    pub fn new(size: usize) -> Self {
        QuboBuilder { size, diag: vec![0.0; size], upper: BTreeMap::new(), offset: 0.0 }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Grows the bit count; new bits start with zero coefficients.
    pub fn ensure_size(&mut self, size: usize) {
        if size > self.size {
            self.size = size;
            self.diag.resize(size, 0.0);
        }
    }

    pub fn add_offset(&mut self, v: f64) -> &mut Self {
        self.offset += v;
        self
    }

    pub fn add_linear(&mut self, i: usize, v: f64) -> &mut Self {
        self.ensure_size(i + 1);
        self.diag[i] += v;
        self
    }

    /// Adds `v * x_i * x_j`. Order of `i` and `j` is irrelevant; `i == j`
    /// lands on the diagonal since `x^2 = x`.
    pub fn add_quadratic(&mut self, i: usize, j: usize, v: f64) -> &mut Self {
        if i == j {
            return self.add_linear(i, v);
        }
        let key = (i.min(j), i.max(j));
        self.ensure_size(key.1 + 1);
        let e = self.upper.entry(key).or_insert(0.0);
        *e += v;
        if *e == 0.0 {
            self.upper.remove(&key);
        }
        self
    }

    pub fn build(self) -> Qubo {
        let upper: Vec<(usize, usize, f64)> =
            self.upper.into_iter().map(|((i, j), v)| (i, j, v)).collect();
        Qubo::from_parts(self.size, self.diag, upper, self.offset)
    }
}

/// Frozen QUBO: `offset + Σ Q_ii x_i + Σ_{i<j} Q_ij x_i x_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuboRepr", into = "QuboRepr")]
pub struct Qubo {
    size: usize,
    diag: Vec<f64>,
    upper: Vec<(usize, usize, f64)>,
    offset: f64,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl Qubo {
    fn from_parts(size: usize, diag: Vec<f64>, upper: Vec<(usize, usize, f64)>, offset: f64) -> Self {
        let mut neighbors = vec![Vec::new(); size];
        for &(i, j, v) in &upper {
            neighbors[i].push((j, v));
            neighbors[j].push((i, v));
        }
        Qubo { size, diag, upper, offset, neighbors }
    }

    pub fn zeros(size: usize) -> Self {
        QuboBuilder::new(size).build()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Nonzero off-diagonal entries `(i, j, Q_ij)` with `i < j`, sorted.
    pub fn upper(&self) -> &[(usize, usize, f64)] {
        &self.upper
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let key = (i.min(j), i.max(j));
        self.upper
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&key))
            .map(|k| self.upper[k].2)
            .unwrap_or(0.0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.diag
            .iter()
            .chain(self.upper.iter().map(|(_, _, v)| v))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_integral(&self) -> bool {
        self.offset.fract() == 0.0
            && self.diag.iter().all(|v| v.fract() == 0.0)
            && self.upper.iter().all(|(_, _, v)| v.fract() == 0.0)
    }

    pub fn to_builder(&self) -> QuboBuilder {
        QuboBuilder {
            size: self.size,
            diag: self.diag.clone(),
            upper: self.upper.iter().map(|&(i, j, v)| ((i, j), v)).collect(),
            offset: self.offset,
        }
    }

    pub fn energy(&self, x: &[bool]) -> Result<f64, QuboError> {
        self.check_len(x.len())?;
        Ok(self.energy_unchecked(x))
    }

    pub(crate) fn energy_unchecked(&self, x: &[bool]) -> f64 {
        let mut e = self.offset;
        for (i, &q) in self.diag.iter().enumerate() {
            if x[i] {
                e += q;
            }
        }
        for &(i, j, q) in &self.upper {
            if x[i] && x[j] {
                e += q;
            }
        }
        e
    }

    /// Energy of the configuration whose bit `i` is `(index >> i) & 1`.
    pub fn energy_of_index(&self, index: u64) -> f64 {
        let mut e = self.offset;
        for (i, &q) in self.diag.iter().enumerate() {
            if index >> i & 1 == 1 {
                e += q;
            }
        }
        for &(i, j, q) in &self.upper {
            if index >> i & index >> j & 1 == 1 {
                e += q;
            }
        }
        e
    }

    /// `E(x with bit i flipped) - E(x)`.
    pub fn delta_energy(&self, x: &[bool], i: usize) -> Result<f64, QuboError> {
        self.check_len(x.len())?;
        if i >= self.size {
            return Err(QuboError::IndexOutOfRange { index: i, size: self.size });
        }
        Ok(self.delta_unchecked(x, i))
    }

    pub(crate) fn delta_unchecked(&self, x: &[bool], i: usize) -> f64 {
        let field = self.local_field(x, i);
        if x[i] {
            -field
        } else {
            field
        }
    }

    /// `Q_ii + Σ_j Q_ij x_j`.
    pub(crate) fn local_field(&self, x: &[bool], i: usize) -> f64 {
        self.neighbors[i]
            .iter()
            .filter(|&&(j, _)| x[j])
            .fold(self.diag[i], |acc, &(_, v)| acc + v)
    }

    fn check_len(&self, len: usize) -> Result<(), QuboError> {
        if len != self.size {
            return Err(QuboError::LengthMismatch { expected: self.size, found: len });
        }
        Ok(())
    }

    /// The sub-QUBO induced on `bits` (all other bits fixed to 0), renumbered
    /// in the given order.
    pub fn restrict(&self, bits: &[usize]) -> Qubo {
        let mut pos = vec![usize::MAX; self.size];
        for (k, &b) in bits.iter().enumerate() {
            pos[b] = k;
        }
        let mut b = QuboBuilder::new(bits.len());
        b.add_offset(self.offset);
        for (k, &i) in bits.iter().enumerate() {
            b.add_linear(k, self.diag[i]);
        }
        for &(i, j, v) in &self.upper {
            if pos[i] != usize::MAX && pos[j] != usize::MAX {
                b.add_quadratic(pos[i], pos[j], v);
            }
        }
        b.build()
    }

    /// Plain-text interop format: optional `# size N` / `# offset v` lines,
    /// then one `i j value` triplet per nonzero coefficient (`i i value` for
    /// the diagonal).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# size {}", self.size);
        let _ = writeln!(out, "# offset {}", self.offset);
        for (i, &v) in self.diag.iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(out, "{i} {i} {v}");
            }
        }
        for &(i, j, v) in &self.upper {
            let _ = writeln!(out, "{i} {j} {v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Qubo, QuboError> {
        let mut b = QuboBuilder::new(0);
        let mut declared = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |reason: &str| QuboError::Parse { line: lineno + 1, reason: reason.into() };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                match (it.next(), it.next()) {
                    (Some("size"), Some(v)) => {
                        declared = Some(v.parse::<usize>().map_err(|_| err("bad size"))?)
                    }
                    (Some("offset"), Some(v)) => {
                        b.add_offset(v.parse::<f64>().map_err(|_| err("bad offset"))?);
                    }
                    _ => {}
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err("expected `i j value`"));
            }
            let i: usize = f[0].parse().map_err(|_| err("bad row index"))?;
            let j: usize = f[1].parse().map_err(|_| err("bad column index"))?;
            let v: f64 = f[2].parse().map_err(|_| err("bad value"))?;
            b.add_quadratic(i, j, v);
        }
        if let Some(n) = declared {
            if n < b.size() {
                return Err(QuboError::Invalid(format!("declared size {n} below max index")));
            }
            b.ensure_size(n);
        }
        Ok(b.build())
    }
}

#[derive(Serialize, Deserialize)]
struct UpperEntry {
    i: usize,
    j: usize,
    v: f64,
}

#[derive(Serialize, Deserialize)]
struct QuboRepr {
    size: usize,
    offset: f64,
    diag: Vec<f64>,
    upper: Vec<UpperEntry>,
}

impl TryFrom<QuboRepr> for Qubo {
    type Error = QuboError;
    fn try_from(r: QuboRepr) -> Result<Self, QuboError> {
        if r.diag.len() != r.size {
            return Err(QuboError::Invalid(format!(
                "diag has {} entries for size {}",
                r.diag.len(),
                r.size
            )));
        }
        let mut b = QuboBuilder::new(r.size);
        b.add_offset(r.offset);
        for (i, v) in r.diag.into_iter().enumerate() {
            b.add_linear(i, v);
        }
        for e in r.upper {
            if e.i >= e.j || e.j >= r.size {
                return Err(QuboError::Invalid(format!("bad upper entry ({}, {})", e.i, e.j)));
            }
            b.add_quadratic(e.i, e.j, e.v);
        }
        Ok(b.build())
    }
}

impl From<Qubo> for QuboRepr {
    fn from(q: Qubo) -> Self {
        QuboRepr {
            size: q.size,
            offset: q.offset,
            diag: q.diag,
            upper: q.upper.into_iter().map(|(i, j, v)| UpperEntry { i, j, v }).collect(),
        }
    }
}

/// Ising model over spins `s_i ∈ {-1, +1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingModel {
    pub h: Vec<f64>,
    pub j: BTreeMap<(usize, usize), f64>,
    pub offset: f64,
}

impl IsingModel {
    pub fn energy(&self, spins: &[i8]) -> f64 {
        let mut e = self.offset;
        for (i, &h) in self.h.iter().enumerate() {
            e += h * spins[i] as f64;
        }
        for (&(i, j), &c) in &self.j {
            e += c * (spins[i] * spins[j]) as f64;
        }
        e
    }
}

/// Substitutes `x_i = (s_i + 1) / 2`.
pub fn to_ising(q: &Qubo) -> IsingModel {
    let mut h: Vec<f64> = q.diag.iter().map(|&v| v / 2.0).collect();
    let mut offset = q.offset + q.diag.iter().sum::<f64>() / 2.0;
    let mut j = BTreeMap::new();
    for &(a, b, v) in &q.upper {
        let quarter = v / 4.0;
        j.insert((a, b), quarter);
        h[a] += quarter;
        h[b] += quarter;
        offset += quarter;
    }
    IsingModel { h, j, offset }
}

/// Integer-valued QUBO obtained by a power-of-two scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledQubo {
    pub qubo: Qubo,
    pub factor: f64,
}

/// Scales by the largest power of two keeping every coefficient strictly below
/// `2^(p-1)` in magnitude, then rounds to integers.
pub fn scale_to_precision(q: &Qubo, precision: u32) -> Result<ScaledQubo, QuboError> {
    if precision != 16 && precision != 64 {
        return Err(QuboError::InvalidPrecision(precision));
    }
    let max = q.max_abs_coefficient();
    if max == 0.0 {
        return Ok(ScaledQubo { qubo: Qubo::zeros(q.size), factor: 1.0 });
    }
    let limit = 2f64.powi(precision as i32 - 1);
    // max * 2^e < limit  <=>  e < (p-1) - log2(max)
    let mut e = (precision as i32 - 1) - max.log2().floor() as i32;
    while max * 2f64.powi(e) >= limit {
        e -= 1;
    }
    loop {
        let factor = 2f64.powi(e);
        let scaled = apply_scale(q, factor);
        if scaled.max_abs_coefficient() < limit {
            return Ok(ScaledQubo { qubo: scaled, factor });
        }
        e -= 1;
    }
}

fn apply_scale(q: &Qubo, factor: f64) -> Qubo {
    let mut b = QuboBuilder::new(q.size);
    b.add_offset((q.offset * factor).round());
    for (i, &v) in q.diag.iter().enumerate() {
        b.add_linear(i, (v * factor).round());
    }
    for &(i, j, v) in &q.upper {
        b.add_quadratic(i, j, (v * factor).round());
    }
    b.build()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixStats {
    pub bits: usize,
    pub distinct_quadratic: usize,
    pub value_range: f64,
}

pub fn stats(q: &Qubo) -> MatrixStats {
    let values: Vec<f64> = q.upper.iter().map(|e| e.2).filter(|&v| v != 0.0).collect();
    let distinct = values
        .iter()
        .map(|v| v.to_bits())
        .collect::<BTreeSet<_>>()
        .len();
    let range = if values.is_empty() {
        0.0
    } else {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    };
    MatrixStats { bits: q.size, distinct_quadratic: distinct, value_range: range }
}

/// Multilinear pseudo-Boolean polynomial. Keys are strictly increasing index
/// lists; the empty key is the constant term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinaryPolynomial {
    num_vars: usize,
    terms: BTreeMap<Vec<usize>, f64>,
}

impl BinaryPolynomial {
    pub fn new(num_vars: usize) -> Self {
        BinaryPolynomial { num_vars, terms: BTreeMap::new() }
    }

    pub fn constant(num_vars: usize, c: f64) -> Self {
        let mut p = Self::new(num_vars);
        p.add_term(&[], c);
        p
    }

    pub fn variable(num_vars: usize, i: usize) -> Self {
        let mut p = Self::new(num_vars);
        p.add_term(&[i], 1.0);
        p
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn terms(&self) -> &BTreeMap<Vec<usize>, f64> {
        &self.terms
    }

    /// Adds `c * Π_{i ∈ vars} x_i`; repeated indices collapse (`x^2 = x`).
    pub fn add_term(&mut self, vars: &[usize], c: f64) {
        let mut key = vars.to_vec();
        key.sort_unstable();
        key.dedup();
        self.add_key(key, c);
    }

    fn add_key(&mut self, key: Vec<usize>, c: f64) {
        if let Some(&last) = key.last() {
            self.num_vars = self.num_vars.max(last + 1);
        }
        match self.terms.entry(key) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if *e.get() == 0.0 {
                    e.remove();
                }
            }
            Entry::Vacant(e) => {
                if c != 0.0 {
                    e.insert(c);
                }
            }
        }
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    pub fn add(&mut self, other: &BinaryPolynomial) {
        for (k, &v) in &other.terms {
            self.add_key(k.clone(), v);
        }
        self.num_vars = self.num_vars.max(other.num_vars);
    }

    pub fn scaled(&self, s: f64) -> BinaryPolynomial {
        let mut p = BinaryPolynomial::new(self.num_vars);
        for (k, &v) in &self.terms {
            p.add_key(k.clone(), v * s);
        }
        p
    }

    pub fn mul(&self, other: &BinaryPolynomial) -> BinaryPolynomial {
        let mut p = BinaryPolynomial::new(self.num_vars.max(other.num_vars));
        for (ka, &va) in &self.terms {
            for (kb, &vb) in &other.terms {
                let mut key: Vec<usize> = ka.iter().chain(kb).copied().collect();
                key.sort_unstable();
                key.dedup();
                p.add_key(key, va * vb);
            }
        }
        p
    }

    /// Evaluates the polynomial; `x` must cover every referenced index.
    pub fn evaluate(&self, x: &[bool]) -> Result<f64, QuboError> {
        if let Some(max) = self.terms.keys().filter_map(|k| k.last()).max() {
            if *max >= x.len() {
                return Err(QuboError::IndexOutOfRange { index: *max, size: x.len() });
            }
        }
        Ok(self
            .terms
            .iter()
            .filter(|(k, _)| k.iter().all(|&i| x[i]))
            .map(|(_, &v)| v)
            .sum())
    }

    /// Converts a polynomial of degree at most two.
    pub fn to_qubo(&self) -> Result<Qubo, QuboError> {
        let d = self.degree();
        if d > 2 {
            return Err(QuboError::NotQuadratic(d));
        }
        let mut b = QuboBuilder::new(self.num_vars);
        for (k, &v) in &self.terms {
            match k.as_slice() {
                [] => {
                    b.add_offset(v);
                }
                [i] => {
                    b.add_linear(*i, v);
                }
                [i, j] => {
                    b.add_quadratic(*i, *j, v);
                }
                _ => unreachable!(),
            }
        }
        Ok(b.build())
    }
}

pub fn hobo_energy(h: &BinaryPolynomial, x: &[bool]) -> Result<f64, QuboError> {
    h.evaluate(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quadratized {
    pub qubo: Qubo,
    /// Substituted pair `(i, j)` with `i < j` → auxiliary bit standing for `x_i x_j`.
    pub pair_aux: BTreeMap<(usize, usize), usize>,
}

/// `x_i x_j - 2 x_i y - 2 x_j y + 3 y`: zero iff `y = x_i x_j`, at least one otherwise.
pub fn pair_penalty(num_vars: usize, i: usize, j: usize, y: usize) -> BinaryPolynomial {
    let mut p = BinaryPolynomial::new(num_vars);
    p.add_term(&[i, j], 1.0);
    p.add_term(&[i, y], -2.0);
    p.add_term(&[j, y], -2.0);
    p.add_term(&[y], 3.0);
    p
}

/// Reduces a polynomial to degree two by pair substitution.
///
/// While a term of degree ≥ 3 remains, the pair occurring in the most such
/// terms (ties: lexicographically smallest) is replaced by an auxiliary `y`
/// in every one of them, and `M * (x_i x_j - 2 x_i y - 2 x_j y + 3 y)` is
/// added with `M = 1 + Σ|c|` over the rewritten terms. A dishonest `y` can
/// lower the rewritten terms by at most `Σ|c|` but pays at least `M`, so the
/// minima are preserved and every minimizer has honest auxiliaries.
/// Auxiliaries are numbered from `h.num_vars()` upward.
pub fn quadratize(h: &BinaryPolynomial) -> Quadratized {
    let mut poly = h.clone();
    let mut next = h.num_vars();
    let mut pair_aux = BTreeMap::new();

    loop {
        let mut freq: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for key in poly.terms.keys().filter(|k| k.len() >= 3) {
            for a in 0..key.len() {
                for b in a + 1..key.len() {
                    *freq.entry((key[a], key[b])).or_insert(0) += 1;
                }
            }
        }
        // BTreeMap iterates pairs ascending, so the first maximum wins ties
        let Some((&(i, j), _)) = freq
            .iter()
            .fold(None, |best: Option<(&(usize, usize), &usize)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
        else {
            break;
        };

        let y = *pair_aux.entry((i, j)).or_insert_with(|| {
            next += 1;
            next - 1
        });
        let affected: Vec<Vec<usize>> = poly
            .terms
            .keys()
            .filter(|k| k.len() >= 3 && k.binary_search(&i).is_ok() && k.binary_search(&j).is_ok())
            .cloned()
            .collect();
        let mut weight = 1.0;
        for key in affected {
            let c = poly.terms.remove(&key).expect("term present");
            weight += c.abs();
            let mut reduced: Vec<usize> = key.into_iter().filter(|&v| v != i && v != j).collect();
            reduced.push(y);
            reduced.sort_unstable();
            poly.add_key(reduced, c);
        }
        poly.num_vars = poly.num_vars.max(next);
        poly.add(&pair_penalty(next, i, j, y).scaled(weight));
    }

    poly.num_vars = poly.num_vars.max(next);
    let qubo = poly.to_qubo().expect("degree reduced to two");
    Quadratized { qubo, pair_aux }
}
