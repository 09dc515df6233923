//! Experiment sweeps: instances × transformations × iteration budgets × runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annealer::{auto_schedule, run_once, AnnealError, ScheduleParams};
use crate::cnf::{exhaustive_sat, generate_random, is_satisfied_by, parse_dimacs, CnfError, Formula};
use crate::mix_seed;
use crate::par::{self, Exec};
use crate::qubo::{scale_to_precision, stats, QuboError};
use crate::transforms::{decode, transform, TransformKind};

/// Instances with more variables than this are not labelled by exhaustive search.
pub const LABEL_MAX_VARS: usize = 24;

/// Attempts per requested satisfiable instance before giving up.
const MAX_ATTEMPTS_PER_INSTANCE: usize = 1000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: CnfError },
    #[error(transparent)]
    Cnf(#[from] CnfError),
    #[error("no satisfiable instance found within {attempts} attempts")]
    NoSatisfiable { attempts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InstanceSource {
    /// Seeded random formulas. With `require_sat`, unsatisfiable draws are
    /// skipped until `count` satisfiable formulas are collected.
    Generate { n: usize, m: usize, count: usize, seed: u64, require_sat: bool },
    /// Every `*.cnf` file in the directory, in file-name order.
    Directory { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: InstanceSource,
    pub transforms: Vec<TransformKind>,
    pub budgets: Vec<u64>,
    pub runs: usize,
    pub precision: u32,
    pub schedule: ScheduleParams,
    pub seed: u64,
    #[serde(default)]
    pub exec: Exec,
}

impl ExperimentConfig {
    /// 50 satisfiable instances at n = 11, m = 46; budgets 10^3 to 10^6.
    pub fn desk_scale(seed: u64) -> Self {
        ExperimentConfig {
            source: InstanceSource::Generate { n: 11, m: 46, count: 50, seed, require_sat: true },
            transforms: TransformKind::ALL.to_vec(),
            budgets: vec![1_000, 10_000, 100_000, 1_000_000],
            runs: 100,
            precision: 16,
            schedule: ScheduleParams::default(),
            seed,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |s: &str| Err(HarnessError::InvalidConfig(s.into()));
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return bad("budgets must be non-empty and ≥ 1");
        }
        if self.runs == 0 {
            return bad("runs must be ≥ 1");
        }
        if self.precision != 16 && self.precision != 64 {
            return bad("precision must be 16 or 64");
        }
        if let Err(e) = self.schedule.validate() {
            return Err(HarnessError::InvalidConfig(e.to_string()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub name: String,
    pub formula: Formula,
    /// `None` when the instance is too large to label.
    pub satisfiable: Option<bool>,
}

fn label(f: &Formula) -> Result<Option<bool>, CnfError> {
    if f.num_vars() > LABEL_MAX_VARS {
        return Ok(None);
    }
    Ok(Some(exhaustive_sat(f)?.satisfiable))
}

/// Draw `k` uses `generate_random(n, m, mix_seed(seed, k))`.
pub fn generate_instances(n: usize, m: usize, count: usize, seed: u64, require_sat: bool) -> Result<Vec<Instance>, HarnessError> {
    let mut out = Vec::with_capacity(count);
    let mut draw = 0u64;
    while out.len() < count {
        if draw as usize >= MAX_ATTEMPTS_PER_INSTANCE * count.max(1) {
            return Err(HarnessError::NoSatisfiable { attempts: draw as usize });
        }
        let formula = generate_random(n, m, mix_seed(seed, draw))?;
        let satisfiable = label(&formula)?;
        if !require_sat || satisfiable == Some(true) {
            out.push(Instance { id: out.len(), name: format!("draw-{draw}"), formula, satisfiable });
        }
        draw += 1;
    }
    Ok(out)
}

pub fn load_directory(dir: &Path) -> Result<Vec<Instance>, HarnessError> {
    let read_err = |source| HarnessError::Read { path: dir.to_path_buf(), source };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(read_err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(read_err)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "cnf"));
    paths.sort();
    paths
        .into_iter()
        .enumerate()
        .map(|(id, path)| {
            let text = fs::read_to_string(&path).map_err(|source| HarnessError::Read { path: path.clone(), source })?;
            let formula = parse_dimacs(&text).map_err(|source| HarnessError::Parse { path: path.clone(), source })?;
            let satisfiable = label(&formula)?;
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok(Instance { id, name, formula, satisfiable })
        })
        .collect()
}

pub fn load_instances(source: &InstanceSource) -> Result<Vec<Instance>, HarnessError> {
    match source {
        InstanceSource::Generate { n, m, count, seed, require_sat } => {
            generate_instances(*n, *m, *count, *seed, *require_sat)
        }
        InstanceSource::Directory { path } => load_directory(path),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: usize,
    pub transform: TransformKind,
    pub budget: u64,
    pub run: usize,
    pub seed: u64,
    /// Best energy of the scaled QUBO.
    pub best_energy: f64,
    pub iteration_found: u64,
    pub iterations_run: u64,
    pub correct: bool,
    pub assignment: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub transform: TransformKind,
    pub budget: u64,
    pub instances: usize,
    pub solved_instances_pct: f64,
    pub correct_solutions_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub instance_id: usize,
    pub transform: TransformKind,
    pub bits: usize,
    pub distinct_quadratic: usize,
    pub value_range: f64,
}

/// A failure confined to one (instance, transformation, budget) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub instance_id: usize,
    pub transform: TransformKind,
    pub budget: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub metrics: Vec<MetricsRow>,
    pub runs: Vec<RunRecord>,
    pub stats: Vec<StatsRow>,
    pub errors: Vec<CellError>,
}

#[derive(Debug, Error)]
enum CellFailure {
    #[error(transparent)]
    Qubo(#[from] QuboError),
    #[error(transparent)]
    Anneal(#[from] AnnealError),
}

struct Cell {
    instance: usize,
    transform: TransformKind,
    budget: u64,
    seed: u64,
}

struct PreparedCell {
    formula_idx: usize,
    result: crate::transforms::TransformResult,
    scaled: crate::qubo::Qubo,
    schedule: crate::annealer::Schedule,
    target: Option<f64>,
}

fn cell_seed(seed: u64, instance: usize, transform: TransformKind, budget: u64) -> u64 {
    let t = TransformKind::ALL.iter().position(|&k| k == transform).unwrap_or(0) as u64;
    mix_seed(mix_seed(mix_seed(seed, instance as u64), t), budget)
}

fn prepare(inst: &Instance, idx: usize, cell: &Cell, cfg: &ExperimentConfig) -> Result<PreparedCell, CellFailure> {
    let result = transform(&inst.formula, cell.transform);
    let scaled = scale_to_precision(&result.qubo, cfg.precision)?;
    let schedule = auto_schedule(&scaled.qubo, &cfg.schedule, cell.budget, mix_seed(cell.seed, u64::MAX))?;
    // The bound is a true lower bound on the scaled energy only when scaling
    // was exact, which holds for integer QUBOs and power-of-two factors ≥ 1.
    let target = (result.qubo.is_integral() && scaled.factor >= 1.0)
        .then(|| result.ground_energy_bound() * scaled.factor);
    Ok(PreparedCell { formula_idx: idx, result, scaled: scaled.qubo, schedule, target })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let instances = load_instances(&cfg.source)?;
    run_on_instances(cfg, &instances)
}

/// The sweep itself. The (cell, run) grid is flattened and processed in
/// parallel; records come back in grid order.
pub fn run_on_instances(cfg: &ExperimentConfig, instances: &[Instance]) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for (idx, inst) in instances.iter().enumerate() {
        for &t in &cfg.transforms {
            for &b in &cfg.budgets {
                let seed = cell_seed(cfg.seed, inst.id, t, b);
                cells.push((idx, Cell { instance: inst.id, transform: t, budget: b, seed }));
            }
        }
    }
    let prepared = par::map_slice(cfg.exec, &cells, |(idx, cell)| prepare(&instances[*idx], *idx, cell, cfg));

    let mut errors = Vec::new();
    let mut jobs = Vec::new();
    for ((_, cell), p) in cells.iter().zip(&prepared) {
        match p {
            Ok(p) => jobs.extend((0..cfg.runs).map(|r| (cell, p, r))),
            Err(e) => errors.push(CellError {
                instance_id: cell.instance,
                transform: cell.transform,
                budget: cell.budget,
                message: e.to_string(),
            }),
        }
    }

    let runs = par::map_slice(cfg.exec, &jobs, |&(cell, p, r)| {
        let seed = mix_seed(cell.seed, r as u64);
        let res = run_once(&p.scaled, &p.schedule, seed, p.target);
        let formula = &instances[p.formula_idx].formula;
        let assignment = decode(&p.result, &res.best_bits).expect("annealer keeps the QUBO size");
        RunRecord {
            instance_id: cell.instance,
            transform: cell.transform,
            budget: cell.budget,
            run: r,
            seed,
            best_energy: res.best_energy,
            iteration_found: res.iteration_found,
            iterations_run: res.iterations_run,
            correct: is_satisfied_by(formula, &assignment),
            assignment: assignment.to_string(),
        }
    });

    let metrics = aggregate(&runs);
    let stats = stats_report(instances, &cfg.transforms);
    Ok(ExperimentOutput { metrics, runs, stats, errors })
}

/// Metrics per (transform, budget) as a fold over run records. Instances
/// without records for a cell (failed cells) are not in its denominator.
pub fn aggregate(records: &[RunRecord]) -> Vec<MetricsRow> {
    #[derive(Default)]
    struct Acc {
        runs: u64,
        correct: u64,
        solved: BTreeMap<usize, bool>,
    }
    let mut acc: BTreeMap<(TransformKind, u64), Acc> = BTreeMap::new();
    for r in records {
        let a = acc.entry((r.transform, r.budget)).or_default();
        a.runs += 1;
        a.correct += r.correct as u64;
        *a.solved.entry(r.instance_id).or_default() |= r.correct;
    }
    acc.into_iter()
        .map(|((transform, budget), a)| {
            let solved = a.solved.values().filter(|&&s| s).count();
            MetricsRow {
                transform,
                budget,
                instances: a.solved.len(),
                solved_instances_pct: 100.0 * solved as f64 / a.solved.len() as f64,
                correct_solutions_pct: 100.0 * a.correct as f64 / a.runs as f64,
            }
        })
        .collect()
}

/// Matrix statistics of the unscaled QUBO per (instance, transformation).
pub fn stats_report(instances: &[Instance], transforms: &[TransformKind]) -> Vec<StatsRow> {
    let mut rows = Vec::new();
    for inst in instances {
        for &t in transforms {
            let s = stats(&transform(&inst.formula, t).qubo);
            rows.push(StatsRow {
                instance_id: inst.id,
                transform: t,
                bits: s.bits,
                distinct_quadratic: s.distinct_quadratic,
                value_range: s.value_range,
            });
        }
    }
    rows
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], headers: &[&str], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(headers)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const METRICS_HEADERS: [&str; 5] = ["transform", "budget", "instances", "solved_instances_pct", "correct_solutions_pct"];
pub const RUNS_HEADERS: [&str; 10] = [
    "instance_id", "transform", "budget", "run", "seed", "best_energy",
    "iteration_found", "iterations_run", "correct", "assignment",
];
pub const STATS_HEADERS: [&str; 5] = ["instance_id", "transform", "bits", "distinct_quadratic", "value_range"];
pub const ERRORS_HEADERS: [&str; 4] = ["instance_id", "transform", "budget", "message"];

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    instances: Vec<ManifestInstance<'a>>,
    files: [&'static str; 4],
}

#[derive(Serialize)]
struct ManifestInstance<'a> {
    id: usize,
    name: &'a str,
    n: usize,
    m: usize,
    satisfiable: Option<bool>,
}

/// Writes `metrics.csv`, `runs.csv`, `stats.csv`, `errors.csv` and
/// `manifest.json` into `dir`. Nothing time- or host-dependent is written.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, instances: &[Instance], out: &ExperimentOutput) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_csv(&out.metrics, &METRICS_HEADERS, fs::File::create(dir.join("metrics.csv"))?)?;
    write_csv(&out.runs, &RUNS_HEADERS, fs::File::create(dir.join("runs.csv"))?)?;
    write_csv(&out.stats, &STATS_HEADERS, fs::File::create(dir.join("stats.csv"))?)?;
    write_csv(&out.errors, &ERRORS_HEADERS, fs::File::create(dir.join("errors.csv"))?)?;
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        instances: instances
            .iter()
            .map(|i| ManifestInstance {
                id: i.id,
                name: &i.name,
                n: i.formula.num_vars(),
                m: i.formula.num_clauses(),
                satisfiable: i.satisfiable,
            })
            .collect(),
        files: ["metrics.csv", "runs.csv", "stats.csv", "errors.csv"],
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{Clause, Literal};

    fn small_cfg(source: InstanceSource) -> ExperimentConfig {
        ExperimentConfig {
            source,
            transforms: TransformKind::ALL.to_vec(),
            budgets: vec![2_000],
            runs: 4,
            precision: 16,
            schedule: ScheduleParams::default(),
            seed: 3,
            exec: Exec::Sequential,
        }
    }

    #[test]
    fn validate_rejects_empty_and_zero() {
        let base = small_cfg(InstanceSource::Generate { n: 5, m: 3, count: 1, seed: 0, require_sat: true });
        let mut c = base.clone();
        c.budgets = vec![];
        assert!(c.validate().is_err());
        c.budgets = vec![10, 0];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.runs = 0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.precision = 32;
        assert!(c.validate().is_err());
    }

    #[test]
    fn trivial_instance_is_always_solved() {
        // (x0 ∨ x1 ∨ x2) alone: 7 of 8 assignments satisfy it
        let f = Formula::new(3, vec![Clause::new([Literal::pos(0), Literal::pos(1), Literal::pos(2)]).unwrap()]).unwrap();
        let inst = Instance { id: 0, name: "t".into(), formula: f, satisfiable: Some(true) };
        let mut cfg = small_cfg(InstanceSource::Directory { path: PathBuf::new() });
        cfg.budgets = vec![100_000];
        let out = run_on_instances(&cfg, &[inst]).unwrap();
        assert_eq!(out.metrics.len(), 4);
        for m in &out.metrics {
            assert_eq!(m.solved_instances_pct, 100.0, "{m:?}");
            assert_eq!(m.correct_solutions_pct, 100.0, "{m:?}");
        }
    }

    #[test]
    fn generated_sets_are_satisfiable_when_required() {
        let set = generate_instances(6, 30, 5, 11, true).unwrap();
        assert_eq!(set.len(), 5);
        assert!(set.iter().all(|i| i.satisfiable == Some(true)));
        assert_eq!(set.iter().map(|i| i.id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn aggregation_counts() {
        let rec = |inst, run, correct| RunRecord {
            instance_id: inst,
            transform: TransformKind::CountTrue,
            budget: 10,
            run,
            seed: 0,
            best_energy: 0.0,
            iteration_found: 0,
            iterations_run: 0,
            correct,
            assignment: String::new(),
        };
        let rows = aggregate(&[rec(0, 0, true), rec(0, 1, false), rec(1, 0, false), rec(1, 1, false)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].instances, 2);
        assert_eq!(rows[0].solved_instances_pct, 50.0);
        assert_eq!(rows[0].correct_solutions_pct, 25.0);
    }

    #[test]
    fn empty_transform_list_gives_header_only_stats() {
        let set = generate_instances(5, 10, 2, 1, false).unwrap();
        let rows = stats_report(&set, &[]);
        let mut buf = Vec::new();
        write_csv(&rows, &STATS_HEADERS, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "instance_id,transform,bits,distinct_quadratic,value_range\n");
    }
}
