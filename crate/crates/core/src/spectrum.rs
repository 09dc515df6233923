//! Exhaustive energy spectra of small QUBOs.
//!
//! A QUBO lifted to `R^(2^N)` by `x_i ↦ (I + Z_i)/2` is diagonal, so its
//! eigenvalues are exactly the energies of the `2^N` bitstrings. This module
//! enumerates them, groups equal energies into levels and computes level
//! degeneracies, the gap and Hamming-distance statistics between the two
//! lowest levels.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::Formula;
use crate::par::{self, Exec};
use crate::qubo::Qubo;
use crate::transforms::{transform, TransformKind};

pub const SPECTRUM_MAX_BITS: usize = 26;

/// Relative tolerance for grouping energies of non-integral QUBOs.
pub const ENERGY_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("exhaustive spectrum limited to {max} bits, QUBO has {bits}")]
    TooLarge { bits: usize, max: usize },
    #[error("spectrum has a single level")]
    SingleLevel,
    #[error("instance {instance}: {source}")]
    Instance { instance: usize, source: Box<SpectrumError> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Level {
    energy: f64,
    start: usize,
    len: usize,
}

/// All `2^N` configurations partitioned into levels of equal energy.
/// Configuration `c` has bit `i` equal to `(c >> i) & 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    bits: usize,
    order: Vec<u32>,
    levels: Vec<Level>,
}

impl Spectrum {
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Level `k` (ascending energy) as `(energy, configurations ascending)`.
    pub fn level(&self, k: usize) -> (f64, &[u32]) {
        let l = self.levels[k];
        (l.energy, &self.order[l.start..l.start + l.len])
    }

    pub fn levels(&self) -> impl Iterator<Item = (f64, &[u32])> + '_ {
        (0..self.levels.len()).map(|k| self.level(k))
    }
}

pub fn full_spectrum(q: &Qubo) -> Result<Spectrum, SpectrumError> {
    full_spectrum_with(q, Exec::default())
}

pub fn full_spectrum_with(q: &Qubo, exec: Exec) -> Result<Spectrum, SpectrumError> {
    let n = q.size();
    if n > SPECTRUM_MAX_BITS {
        return Err(SpectrumError::TooLarge { bits: n, max: SPECTRUM_MAX_BITS });
    }
    let energies = all_energies(q, exec);
    if q.is_integral() {
        if let Some(s) = counting_sort_levels(n, &energies) {
            return Ok(s);
        }
    }
    Ok(sorted_levels(n, &energies, exec, !q.is_integral()))
}

/// Energy of every configuration, indexed by configuration. Each chunk walks
/// its configurations in Gray-code order, paying one flip delta per state.
pub fn all_energies(q: &Qubo, exec: Exec) -> Vec<f64> {
    let n = q.size();
    let total = 1usize << n;
    let low = n.min(14);
    let mut energies = vec![0.0; total];
    par::for_each_chunk_mut(exec, &mut energies, 1 << low, |ci, chunk| {
        let base = (ci as u64) << low;
        let mut x = base;
        let mut e = q.energy_of_index(x);
        chunk[0] = e;
        for t in 1..chunk.len() as u64 {
            let i = t.trailing_zeros() as usize;
            let mut field = q.diag()[i];
            for &(j, v) in q.neighbors(i) {
                if x >> j & 1 == 1 {
                    field += v;
                }
            }
            if x >> i & 1 == 1 {
                e -= field;
            } else {
                e += field;
            }
            x ^= 1 << i;
            chunk[(x - base) as usize] = e;
        }
    });
    energies
}

fn counting_sort_levels(n: usize, energies: &[f64]) -> Option<Spectrum> {
    let (lo, hi) = energies
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let span = hi - lo;
    if !(span >= 0.0) || span > (4 * energies.len()).max(1 << 20) as f64 {
        return None;
    }
    let lo_i = lo as i64;
    let slot = |e: f64| (e as i64 - lo_i) as usize;
    let mut counts = vec![0usize; span as usize + 1];
    for &e in energies {
        counts[slot(e)] += 1;
    }
    let mut levels = Vec::new();
    let mut starts = vec![0usize; counts.len()];
    let mut acc = 0;
    for (k, &c) in counts.iter().enumerate() {
        starts[k] = acc;
        if c > 0 {
            levels.push(Level { energy: (lo_i + k as i64) as f64, start: acc, len: c });
        }
        acc += c;
    }
    let mut order = vec![0u32; energies.len()];
    for (cfg, &e) in energies.iter().enumerate() {
        let s = &mut starts[slot(e)];
        order[*s] = cfg as u32;
        *s += 1;
    }
    Some(Spectrum { bits: n, order, levels })
}

fn sorted_levels(n: usize, energies: &[f64], exec: Exec, tolerant: bool) -> Spectrum {
    let mut pairs: Vec<(f64, u32)> = energies.iter().enumerate().map(|(c, &e)| (e, c as u32)).collect();
    par::sort_by(exec, &mut pairs, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut levels: Vec<Level> = Vec::new();
    for (k, &(e, _)) in pairs.iter().enumerate() {
        match levels.last_mut() {
            Some(l) if same_energy(l.energy, e, tolerant) => l.len += 1,
            _ => levels.push(Level { energy: e, start: k, len: 1 }),
        }
    }
    let mut order: Vec<u32> = pairs.into_iter().map(|p| p.1).collect();
    if tolerant {
        for l in &levels {
            order[l.start..l.start + l.len].sort_unstable();
        }
    }
    Spectrum { bits: n, order, levels }
}

fn same_energy(level: f64, e: f64, tolerant: bool) -> bool {
    if tolerant {
        (e - level).abs() <= ENERGY_REL_TOL * level.abs().max(1.0)
    } else {
        e == level
    }
}

/// Diagonal of the lifted Hamiltonian in tensor-product order: factor 0 is
/// the most significant, and factor index 0 corresponds to `x_i = 1`.
pub fn diagonal_hamiltonian(q: &Qubo) -> Vec<f64> {
    let n = q.size();
    (0..1u64 << n).map(|k| q.energy_of_index(tensor_index_to_config(k, n))).collect()
}

/// Maps a tensor-basis index to the configuration it represents.
pub fn tensor_index_to_config(k: u64, n: usize) -> u64 {
    (0..n).fold(0, |c, i| {
        let bit = k >> (n - 1 - i) & 1;
        c | (1 - bit) << i
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub ground_energy: f64,
    pub ground_degeneracy: u64,
    pub first_excited_energy: f64,
    pub first_excited_degeneracy: u64,
    pub gap: f64,
}

pub fn level_report(s: &Spectrum) -> Result<LevelReport, SpectrumError> {
    if s.num_levels() < 2 {
        return Err(SpectrumError::SingleLevel);
    }
    let (e0, g) = s.level(0);
    let (e1, x) = s.level(1);
    Ok(LevelReport {
        ground_energy: e0,
        ground_degeneracy: g.len() as u64,
        first_excited_energy: e1,
        first_excited_degeneracy: x.len() as u64,
        gap: e1 - e0,
    })
}

/// Pair counts by Hamming distance; `counts[d]` for `d` in `0..=N`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HammingHistogram {
    pub counts: Vec<u64>,
}

impl HammingHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HammingReport {
    /// Unordered pairs inside the ground level.
    pub ground: HammingHistogram,
    /// Unordered pairs inside the first excited level.
    pub excited: HammingHistogram,
    /// All (ground, excited) pairs.
    pub cross: HammingHistogram,
}

pub fn hamming_histograms(s: &Spectrum) -> Result<HammingReport, SpectrumError> {
    hamming_histograms_with(s, Exec::default())
}

pub fn hamming_histograms_with(s: &Spectrum, exec: Exec) -> Result<HammingReport, SpectrumError> {
    if s.num_levels() < 2 {
        return Err(SpectrumError::SingleLevel);
    }
    let n = s.bits();
    let ground = s.level(0).1;
    let excited = s.level(1).1;
    Ok(HammingReport {
        ground: within_histogram(ground, n, exec),
        excited: within_histogram(excited, n, exec),
        cross: cross_histogram(ground, excited, n, exec),
    })
}

/// Pairwise counts below this are done by direct enumeration.
const DIRECT_PAIR_LIMIT: u128 = 1 << 24;

pub fn within_histogram(set: &[u32], n: usize, exec: Exec) -> HammingHistogram {
    let pairs = set.len() as u128 * set.len() as u128 / 2;
    if pairs <= DIRECT_PAIR_LIMIT {
        let mut counts = vec![0u64; n + 1];
        for (k, &a) in set.iter().enumerate() {
            for &b in &set[k + 1..] {
                counts[(a ^ b).count_ones() as usize] += 1;
            }
        }
        return HammingHistogram { counts };
    }
    let mut counts = xor_correlation_histogram(set, set, n, exec);
    counts[0] = 0;
    for c in &mut counts {
        *c /= 2;
    }
    HammingHistogram { counts }
}

pub fn cross_histogram(a: &[u32], b: &[u32], n: usize, exec: Exec) -> HammingHistogram {
    if a.len() as u128 * b.len() as u128 <= DIRECT_PAIR_LIMIT {
        let mut counts = vec![0u64; n + 1];
        for &x in a {
            for &y in b {
                counts[(x ^ y).count_ones() as usize] += 1;
            }
        }
        return HammingHistogram { counts };
    }
    HammingHistogram { counts: xor_correlation_histogram(a, b, n, exec) }
}

/// Counts ordered pairs `(x ∈ a, y ∈ b)` by `popcount(x ^ y)` through a
/// Walsh–Hadamard XOR-correlation over the bits that vary across `a ∪ b`,
/// computed modulo the Mersenne prime `2^61 - 1` (exact: counts stay below it).
fn xor_correlation_histogram(a: &[u32], b: &[u32], n: usize, exec: Exec) -> Vec<u64> {
    let first = a.first().or(b.first()).copied().unwrap_or(0);
    let varying = a.iter().chain(b).fold(0u32, |m, &c| m | (c ^ first));
    let active: Vec<u32> = (0..n as u32).filter(|&i| varying >> i & 1 == 1).collect();
    let compress = |c: u32| {
        active
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &i)| acc | ((c >> i & 1) as usize) << k)
    };
    let size = 1usize << active.len();

    let indicator = |set: &[u32]| {
        let mut v = vec![0u64; size];
        for &c in set {
            v[compress(c)] += 1;
        }
        v
    };
    let same = std::ptr::eq(a, b);
    let mut fa = indicator(a);
    wht(&mut fa, exec);
    let prod: Vec<u64> = if same {
        fa.iter().map(|&x| mul_mod(x, x)).collect()
    } else {
        let mut fb = indicator(b);
        wht(&mut fb, exec);
        fa.iter().zip(&fb).map(|(&x, &y)| mul_mod(x, y)).collect()
    };
    let mut corr = prod;
    wht(&mut corr, exec);
    let inv = pow_mod(pow_mod(2, active.len() as u64), MOD - 2);

    let mut counts = vec![0u64; n + 1];
    for (z, &v) in corr.iter().enumerate() {
        if v != 0 {
            counts[z.count_ones() as usize] += mul_mod(v, inv);
        }
    }
    counts
}

const MOD: u64 = (1 << 61) - 1;

fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MOD {
        s - MOD
    } else {
        s
    }
}

fn sub_mod(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + MOD - b
    }
}

fn mul_mod(a: u64, b: u64) -> u64 {
    let p = a as u128 * b as u128;
    let lo = (p as u64) & MOD;
    let hi = (p >> 61) as u64;
    add_mod(lo, hi)
}

fn pow_mod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base);
        }
        base = mul_mod(base, base);
        exp >>= 1;
    }
    acc
}

/// Unnormalized in-place Walsh–Hadamard transform modulo `MOD`.
fn wht(data: &mut [u64], exec: Exec) {
    const SERIAL: usize = 1 << 14;
    let len = data.len();
    if len <= SERIAL {
        let mut h = 1;
        while h < len {
            for block in data.chunks_mut(2 * h) {
                let (lo, hi) = block.split_at_mut(h);
                butterfly(lo, hi);
            }
            h *= 2;
        }
        return;
    }
    let (lo, hi) = data.split_at_mut(len / 2);
    par::join(exec, || wht(lo, exec), || wht(hi, exec));
    combine(lo, hi, exec);
}

fn combine(lo: &mut [u64], hi: &mut [u64], exec: Exec) {
    const SERIAL: usize = 1 << 14;
    if lo.len() <= SERIAL {
        butterfly(lo, hi);
        return;
    }
    let mid = lo.len() / 2;
    let (l1, l2) = lo.split_at_mut(mid);
    let (h1, h2) = hi.split_at_mut(mid);
    par::join(exec, || combine(l1, h1, exec), || combine(l2, h2, exec));
}

fn butterfly(lo: &mut [u64], hi: &mut [u64]) {
    for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = add_mod(x, y);
        *b = sub_mod(x, y);
    }
}

/// Spectrum summary of one (instance, transformation) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnalysis {
    pub instance_id: usize,
    pub transform: TransformKind,
    pub bits: usize,
    pub report: LevelReport,
    pub hamming: HammingReport,
}

/// Means across instances. Hamming means are given both as raw pair counts
/// and as per-instance frequencies (counts divided by that histogram's total).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedAnalysis {
    pub transform: TransformKind,
    pub instances: usize,
    pub mean_ground_energy: f64,
    pub mean_ground_degeneracy: f64,
    pub mean_first_excited_energy: f64,
    pub mean_first_excited_degeneracy: f64,
    pub mean_gap: f64,
    /// `[ground, excited, cross]`, indexed by distance.
    pub mean_counts: [Vec<f64>; 3],
    pub mean_frequencies: [Vec<f64>; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub rows: Vec<InstanceAnalysis>,
    pub average: AveragedAnalysis,
}

pub fn analyze_instance(f: &Formula, id: usize, kind: TransformKind, exec: Exec) -> Result<InstanceAnalysis, SpectrumError> {
    let r = transform(f, kind);
    let s = full_spectrum_with(&r.qubo, exec)?;
    Ok(InstanceAnalysis {
        instance_id: id,
        transform: kind,
        bits: r.num_bits(),
        report: level_report(&s)?,
        hamming: hamming_histograms_with(&s, exec)?,
    })
}

pub fn averaged_analysis(instances: &[Formula], kind: TransformKind) -> Result<AnalysisReport, SpectrumError> {
    averaged_analysis_with(instances, kind, Exec::default())
}

/// Instances are processed one after another; each spectrum is parallel inside.
pub fn averaged_analysis_with(instances: &[Formula], kind: TransformKind, exec: Exec) -> Result<AnalysisReport, SpectrumError> {
    let rows = instances
        .iter()
        .enumerate()
        .map(|(id, f)| {
            analyze_instance(f, id, kind, exec)
                .map_err(|e| SpectrumError::Instance { instance: id, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let average = average_rows(kind, &rows);
    Ok(AnalysisReport { rows, average })
}

pub fn average_rows(kind: TransformKind, rows: &[InstanceAnalysis]) -> AveragedAnalysis {
    let k = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&InstanceAnalysis) -> f64| rows.iter().map(f).sum::<f64>() / k;
    let width = rows.iter().map(|r| r.bits + 1).max().unwrap_or(0);
    let mut mean_counts: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; width]);
    let mut mean_frequencies = mean_counts.clone();
    for r in rows {
        for (slot, h) in [&r.hamming.ground, &r.hamming.excited, &r.hamming.cross].into_iter().enumerate() {
            let total = h.total();
            for (d, &c) in h.counts.iter().enumerate() {
                mean_counts[slot][d] += c as f64 / k;
                if total > 0 {
                    mean_frequencies[slot][d] += c as f64 / total as f64 / k;
                }
            }
        }
    }
    AveragedAnalysis {
        transform: kind,
        instances: rows.len(),
        mean_ground_energy: mean(&|r| r.report.ground_energy),
        mean_ground_degeneracy: mean(&|r| r.report.ground_degeneracy as f64),
        mean_first_excited_energy: mean(&|r| r.report.first_excited_energy),
        mean_first_excited_degeneracy: mean(&|r| r.report.first_excited_degeneracy as f64),
        mean_gap: mean(&|r| r.report.gap),
        mean_counts,
        mean_frequencies,
    }
}

pub const SET_PAIRS: [&str; 3] = ["ground", "excited", "cross"];

/// `instance_id, transform, bits, ground_energy, ground_deg, e1, e1_deg, gap`.
pub fn write_levels_csv<W: Write>(rows: &[InstanceAnalysis], out: W) -> Result<(), SpectrumError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance_id", "transform", "bits", "ground_energy", "ground_deg", "e1", "e1_deg", "gap"])?;
    for r in rows {
        let rep = &r.report;
        w.write_record([
            r.instance_id.to_string(),
            r.transform.to_string(),
            r.bits.to_string(),
            rep.ground_energy.to_string(),
            rep.ground_degeneracy.to_string(),
            rep.first_excited_energy.to_string(),
            rep.first_excited_degeneracy.to_string(),
            rep.gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `instance_id, transform, set_pair, distance, count`, one row per distance.
pub fn write_hamming_csv<W: Write>(rows: &[InstanceAnalysis], out: W) -> Result<(), SpectrumError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance_id", "transform", "set_pair", "distance", "count"])?;
    for r in rows {
        let hs = [&r.hamming.ground, &r.hamming.excited, &r.hamming.cross];
        for (label, h) in SET_PAIRS.iter().zip(hs) {
            for (d, c) in h.counts.iter().enumerate() {
                w.write_record([
                    r.instance_id.to_string(),
                    r.transform.to_string(),
                    label.to_string(),
                    d.to_string(),
                    c.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `transform, set_pair, distance, mean_count, mean_frequency`.
pub fn write_hamming_means_csv<W: Write>(avgs: &[AveragedAnalysis], out: W) -> Result<(), SpectrumError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["transform", "set_pair", "distance", "mean_count", "mean_frequency"])?;
    for a in avgs {
        for (slot, label) in SET_PAIRS.iter().enumerate() {
            for d in 0..a.mean_counts[slot].len() {
                w.write_record([
                    a.transform.to_string(),
                    label.to_string(),
                    d.to_string(),
                    a.mean_counts[slot][d].to_string(),
                    a.mean_frequencies[slot][d].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
