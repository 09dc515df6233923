//! Single-flip Metropolis annealer with a dynamic energy offset.
//!
//! Each iteration evaluates every single-bit flip, marks each one accepted
//! independently with probability `min(1, exp(-(ΔE_i - E_off) / T))`, and
//! flips one accepted bit chosen uniformly. When nothing is accepted the
//! offset `E_off` grows by a fixed increment; any flip resets it to zero.
//! Temperatures decay exponentially from `T_start` to `T_end`.
//!
//! The start, transition and end temperatures and the offset increment are
//! derived from an estimate of the mean flip cost at local minima, see
//! [`auto_schedule`].

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mix_seed;
use crate::par::{self, Exec};
use crate::qubo::Qubo;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnealError {
    #[error("invalid schedule parameters: {0}")]
    InvalidParams(String),
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Flip probability at a typical local minimum at the start temperature.
    pub p_start: f64,
    /// Flip probability at the transition temperature.
    pub p_trans: f64,
    /// Fraction of the iterations after which the transition temperature is reached.
    pub nu: f64,
    /// The offset climbs the mean minimum depth in `k` rejected iterations.
    pub k: f64,
    /// Local minima sampled to estimate the mean flip cost.
    pub minima_samples: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { p_start: 0.99, p_trans: 0.5, nu: 0.5, k: 10.0, minima_samples: 64 }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<(), AnnealError> {
        let bad = |msg: String| Err(AnnealError::InvalidParams(msg));
        if !(0.0 < self.p_trans && self.p_trans < self.p_start && self.p_start < 1.0) {
            return bad(format!(
                "need 0 < p_trans < p_start < 1, got p_trans={} p_start={}",
                self.p_trans, self.p_start
            ));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(format!("nu must lie in (0, 1], got {}", self.nu));
        }
        if !(self.k >= 1.0) {
            return bad(format!("k must be at least 1, got {}", self.k));
        }
        if self.minima_samples == 0 {
            return bad("minima_samples must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_start: f64,
    pub t_trans: f64,
    pub t_end: f64,
    /// Per-iteration temperature factor `(T_end / T_start)^(1/I)`.
    pub decay: f64,
    pub e_dyn_off: f64,
    pub iterations: u64,
    /// Estimated mean flip cost at local minima the schedule was derived from.
    pub mean_delta: f64,
}

impl Schedule {
    /// Exponential schedule through the two end points.
    pub fn exponential(t_start: f64, t_end: f64, e_dyn_off: f64, iterations: u64) -> Result<Self, AnnealError> {
        if iterations == 0 {
            return Err(AnnealError::ZeroIterations);
        }
        if !(t_end > 0.0 && t_start >= t_end && t_start.is_finite()) {
            return Err(AnnealError::InvalidSchedule(format!(
                "need T_start >= T_end > 0, got {t_start} and {t_end}"
            )));
        }
        if !(e_dyn_off >= 0.0 && e_dyn_off.is_finite()) {
            return Err(AnnealError::InvalidSchedule(format!("bad offset increment {e_dyn_off}")));
        }
        let decay = (t_end / t_start).powf(1.0 / iterations as f64);
        Ok(Schedule {
            t_start,
            t_trans: t_end,
            t_end,
            decay,
            e_dyn_off,
            iterations,
            mean_delta: f64::NAN,
        })
    }

    /// `T(t) = T_start * d^t`.
    pub fn temperature(&self, t: u64) -> f64 {
        self.t_start * self.decay.powf(t as f64)
    }
}

/// Temperature at which a local minimum with `n` flips of mean cost
/// `mean_delta` is left with probability `p_flip` in one iteration:
/// `T = -Ē / ln(1 - (1 - p_flip)^(1/n))`.
pub fn temperature_for(mean_delta: f64, p_flip: f64, n: usize) -> f64 {
    -mean_delta / (1.0 - (1.0 - p_flip).powf(1.0 / n as f64)).ln()
}

/// Steepest descent: repeatedly flips the most improving bit (lowest index on
/// ties) until no flip lowers the energy. Returns the flip deltas at the
/// local minimum.
pub fn greedy_descent(q: &Qubo, x: &mut [bool]) -> Vec<f64> {
    let mut deltas: Vec<f64> = (0..q.size()).map(|i| q.delta_unchecked(x, i)).collect();
    loop {
        let best = deltas
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, &d)| match acc {
                Some((_, bd)) if bd <= d => acc,
                _ => Some((i, d)),
            });
        match best {
            Some((i, d)) if d < 0.0 => flip_bit(q, x, &mut deltas, i),
            _ => return deltas,
        }
    }
}

fn flip_bit(q: &Qubo, x: &mut [bool], deltas: &mut [f64], i: usize) {
    x[i] = !x[i];
    deltas[i] = -deltas[i];
    let dir = if x[i] { 1.0 } else { -1.0 };
    for &(j, v) in q.neighbors(i) {
        deltas[j] += if x[j] { -v * dir } else { v * dir };
    }
}

/// Mean over `samples` random restarts of `(1/N) Σ_i (E(X^i) - E(X))`, where
/// `X` is the local minimum reached by [`greedy_descent`].
pub fn estimate_mean_delta(q: &Qubo, samples: usize, seed: u64) -> f64 {
    let n = q.size();
    if n == 0 || samples == 0 {
        return 0.0;
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        let mut x: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let deltas = greedy_descent(q, &mut x);
        total += deltas.iter().sum::<f64>() / n as f64;
    }
    total / samples as f64
}

/// Derives the schedule for `iterations` steps.
///
/// With `Ē` the estimated mean flip cost, `T_start` and `T_trans` come from
/// [`temperature_for`] at `p_start` and `p_trans`. Requiring
/// `T_start d^I = T_end` and `T_start d^(νI) = T_trans` gives
/// `T_end = T_start^(1 - 1/ν) T_trans^(1/ν)`. The offset increment is `Ē / k`.
/// A flat landscape (`Ē = 0`) falls back to `T_start = 1`, `T_end = 0.01`.
pub fn auto_schedule(q: &Qubo, params: &ScheduleParams, iterations: u64, seed: u64) -> Result<Schedule, AnnealError> {
    params.validate()?;
    if iterations == 0 {
        return Err(AnnealError::ZeroIterations);
    }
    let mean = estimate_mean_delta(q, params.minima_samples, seed);
    schedule_from_mean(mean, q.size(), params, iterations)
}

/// The closed-form part of [`auto_schedule`], given the estimate.
pub fn schedule_from_mean(mean_delta: f64, n: usize, params: &ScheduleParams, iterations: u64) -> Result<Schedule, AnnealError> {
    params.validate()?;
    if iterations == 0 {
        return Err(AnnealError::ZeroIterations);
    }
    if !(mean_delta > 0.0) || n == 0 {
        let mut s = Schedule::exponential(1.0, 0.01, 0.0, iterations)?;
        s.t_trans = s.t_start * (s.t_end / s.t_start).powf(params.nu);
        s.mean_delta = mean_delta.max(0.0);
        return Ok(s);
    }
    let t_start = temperature_for(mean_delta, params.p_start, n);
    let t_trans = temperature_for(mean_delta, params.p_trans, n);
    let t_end = t_start.powf(1.0 - 1.0 / params.nu) * t_trans.powf(1.0 / params.nu);
    let mut s = Schedule::exponential(t_start, t_end, mean_delta / params.k, iterations)?;
    s.t_trans = t_trans;
    s.mean_delta = mean_delta;
    Ok(s)
}

/// State of one annealing run.
pub struct Walker<'q, R> {
    q: &'q Qubo,
    x: Vec<bool>,
    deltas: Vec<f64>,
    energy: f64,
    offset: f64,
    accepted: Vec<usize>,
    rng: R,
}

impl<'q, R: Rng> Walker<'q, R> {
    pub fn new(q: &'q Qubo, x: Vec<bool>, rng: R) -> Self {
        assert_eq!(x.len(), q.size(), "initial state length");
        let deltas = (0..q.size()).map(|i| q.delta_unchecked(&x, i)).collect();
        let energy = q.energy_unchecked(&x);
        Walker { q, x, deltas, energy, offset: 0.0, accepted: Vec::new(), rng }
    }

    pub fn random(q: &'q Qubo, mut rng: R) -> Self {
        let x = (0..q.size()).map(|_| rng.random()).collect();
        Self::new(q, x, rng)
    }

    pub fn state(&self) -> &[bool] {
        &self.x
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Incrementally maintained `E(x with bit i flipped) - E(x)`.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn flip(&mut self, i: usize) {
        self.energy += self.deltas[i];
        flip_bit(self.q, &mut self.x, &mut self.deltas, i);
    }

    /// One iteration at temperature `temp`. Returns the flipped bit, if any.
    ///
    /// Bits with `ΔE_i <= E_off` are accepted outright. The rest are
    /// accepted with probability `p_i < 1`; they are sampled by skipping
    /// geometrically with the largest such `p̂` and thinning each candidate
    /// with `p_i / p̂`, which draws every bit independently with exactly
    /// `p_i` while scanning the bits in index order.
    pub fn step(&mut self, temp: f64, e_dyn_off: f64) -> Option<usize> {
        let n = self.x.len();
        self.accepted.clear();
        let mut min_excess = f64::INFINITY;
        for (i, &d) in self.deltas.iter().enumerate() {
            let excess = d - self.offset;
            if excess <= 0.0 {
                self.accepted.push(i);
            } else if excess < min_excess {
                min_excess = excess;
            }
        }

        let p_hat = (-min_excess / temp).exp();
        if p_hat > 0.0 {
            let log_miss = (-p_hat).ln_1p();
            let mut pos = 0usize;
            while pos < n {
                let u = 1.0 - self.rng.random::<f64>();
                let skip = (u.ln() / log_miss).floor();
                if !(skip < (n - pos) as f64) {
                    break;
                }
                pos += skip as usize;
                let excess = self.deltas[pos] - self.offset;
                if excess > 0.0 {
                    let p = (-excess / temp).exp();
                    if p >= p_hat || self.rng.random::<f64>() * p_hat < p {
                        self.accepted.push(pos);
                    }
                }
                pos += 1;
            }
        }

        if self.accepted.is_empty() {
            self.offset += e_dyn_off;
            return None;
        }
        let pick = self.accepted[self.rng.random_range(0..self.accepted.len())];
        self.flip(pick);
        self.offset = 0.0;
        Some(pick)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealOptions {
    pub runs: usize,
    pub seed: u64,
    /// Stop a run once its best energy reaches this value. Only pass a lower
    /// bound on the energy: then no later state could replace the best one
    /// and the result equals that of the full run.
    pub target: Option<f64>,
    pub exec: Exec,
}

impl AnnealOptions {
    pub fn new(runs: usize, seed: u64) -> Self {
        AnnealOptions { runs, seed, target: None, exec: Exec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    #[serde(with = "bitstring")]
    pub best_bits: Vec<bool>,
    pub best_energy: f64,
    /// Iteration after which the best state was first held (0 = initial state).
    pub iteration_found: u64,
    pub iterations_run: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub runs: Vec<RunResult>,
    pub target: Option<f64>,
    pub schedule: Schedule,
}

impl SampleSet {
    pub fn best(&self) -> Option<&RunResult> {
        self.runs.iter().min_by(|a, b| a.best_energy.total_cmp(&b.best_energy))
    }
}

pub fn run_once(q: &Qubo, schedule: &Schedule, seed: u64, target: Option<f64>) -> RunResult {
    let rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut walker = Walker::random(q, rng);
    let mut best_bits = walker.state().to_vec();
    let mut best_energy = walker.energy();
    let mut iteration_found = 0;
    let reached = |e: f64| target.is_some_and(|t| e <= t);

    let mut temp = schedule.t_start;
    let mut iterations_run = 0;
    while iterations_run < schedule.iterations && !reached(best_energy) {
        walker.step(temp, schedule.e_dyn_off);
        iterations_run += 1;
        if walker.energy() < best_energy {
            best_energy = walker.energy();
            best_bits.copy_from_slice(walker.state());
            iteration_found = iterations_run;
        }
        temp *= schedule.decay;
    }
    RunResult { best_bits, best_energy, iteration_found, iterations_run, seed }
}

/// Independent runs; run `r` uses the stream seeded by `mix_seed(seed, r)`.
/// Results are in run order regardless of the executor.
pub fn anneal(q: &Qubo, schedule: &Schedule, opts: &AnnealOptions) -> SampleSet {
    let runs = par::map_range(opts.exec, opts.runs, |r| {
        run_once(q, schedule, mix_seed(opts.seed, r as u64), opts.target)
    });
    SampleSet { runs, target: opts.target, schedule: *schedule }
}

mod bitstring {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&bits.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let s = String::deserialize(d)?;
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(serde::de::Error::custom(format!("bad bit {other:?}"))),
            })
            .collect()
    }
}
