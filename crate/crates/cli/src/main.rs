use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sat2qubo::annealer::{anneal, auto_schedule, AnnealError, AnnealOptions, ScheduleParams};
use sat2qubo::cnf::{self, CnfError, Formula};
use sat2qubo::harness::{self, ExperimentConfig, HarnessError, Instance, InstanceSource};
use sat2qubo::patternsearch::{search_patterns_with, PatternCatalog, SearchError, SearchSpec, DEFAULT_CAP};
use sat2qubo::qubo::{scale_to_precision, QuboError};
use sat2qubo::spectrum::{self, SpectrumError};
use sat2qubo::transforms::{self, decode, PatternSet, TransformError, TransformKind, TransformResult};
use sat2qubo::Exec;

#[derive(Parser)]
#[command(name = "sat2qubo", version, about = "3-SAT to QUBO transformations, annealing and spectrum analysis")]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for output files; stdout when omitted.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random 3-SAT instances as DIMACS files.
    Generate(GenerateArgs),
    /// Transform a DIMACS formula into a QUBO.
    Transform(TransformArgs),
    /// Anneal a formula's QUBO and decode the best states.
    Solve(SolveArgs),
    /// Ground and first-excited levels per (instance, transformation).
    Spectrum(AnalysisArgs),
    /// Hamming-distance histograms of the two lowest levels.
    Hamming(AnalysisArgs),
    /// QUBO matrix statistics per (instance, transformation).
    Stats(StatsArgs),
    /// Budget sweep with solved and correct percentages.
    Experiment(ExperimentArgs),
    /// Enumerate valid 4x4 clause patterns over a value set.
    PatternSearch(PatternSearchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Keep only satisfiable formulas.
    #[arg(long)]
    sat_only: bool,
}

#[derive(Args)]
struct InstanceArgs {
    /// DIMACS file or directory of `.cnf` files.
    #[arg(long, conflicts_with_all = ["n", "m"])]
    input: Option<PathBuf>,
    #[arg(long, requires = "m")]
    n: Option<usize>,
    #[arg(long, requires = "n")]
    m: Option<usize>,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Keep only satisfiable generated formulas.
    #[arg(long)]
    sat_only: bool,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    transform: TransformKind,
    /// Pattern set JSON replacing the built-in one for `algorithm`.
    #[arg(long)]
    patterns: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 0.99)]
    p_start: f64,
    #[arg(long, default_value_t = 0.5)]
    p_trans: f64,
    #[arg(long, default_value_t = 0.5)]
    nu: f64,
    #[arg(long, default_value_t = 10.0)]
    k: f64,
}

impl ScheduleArgs {
    fn params(&self) -> ScheduleParams {
        ScheduleParams { p_start: self.p_start, p_trans: self.p_trans, nu: self.nu, k: self.k, ..ScheduleParams::default() }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_kind, default_value = "algorithm")]
    transform: TransformKind,
    #[arg(long, default_value_t = 100_000)]
    iterations: u64,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 16, value_parser = parse_precision)]
    precision: u32,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args)]
struct AnalysisArgs {
    #[command(flatten)]
    instances: InstanceArgs,
    /// Comma-separated transformation names; all four when omitted.
    #[arg(long)]
    transforms: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    instances: InstanceArgs,
    /// Comma-separated transformation names; all four when omitted.
    #[arg(long)]
    transforms: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; the remaining flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    instances: InstanceArgs,
    /// Comma-separated transformation names; all four when omitted.
    #[arg(long)]
    transforms: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000,1000000")]
    budgets: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 16, value_parser = parse_precision)]
    precision: u32,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args)]
struct PatternSearchArgs {
    /// Comma-separated candidate values for the ten upper-triangular cells.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-1,0,1")]
    values: Vec<f64>,
    #[arg(long = "type", default_value_t = 0)]
    type_id: usize,
    #[arg(long, default_value_t = DEFAULT_CAP as u64)]
    cap: u64,
}

fn parse_kind(s: &str) -> Result<TransformKind, String> {
    s.parse().map_err(|e: TransformError| e.to_string())
}

fn parse_precision(s: &str) -> Result<u32, String> {
    match s {
        "16" => Ok(16),
        "64" => Ok(64),
        _ => Err(format!("precision must be 16 or 64, got {s}")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let rec = json!({ "error": "usage", "message": e.to_string().trim_end() });
            eprintln!("{rec}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let rec = json!({ "error": error_kind(&e), "message": format!("{e:#}") });
            eprintln!("{rec}");
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<CnfError>() {
            return "cnf";
        } else if cause.is::<QuboError>() {
            return "qubo";
        } else if cause.is::<TransformError>() {
            return "transform";
        } else if cause.is::<AnnealError>() {
            return "anneal";
        } else if cause.is::<SpectrumError>() {
            return "spectrum";
        } else if cause.is::<SearchError>() {
            return "pattern-search";
        } else if cause.is::<HarnessError>() {
            return "experiment";
        } else if cause.is::<serde_json::Error>() {
            return "json";
        } else if cause.is::<io::Error>() {
            return "io";
        }
    }
    "error"
}

fn run(cli: &Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let out = Output { dir: cli.out_dir.as_deref(), format: cli.format };
    match &cli.command {
        Command::Generate(a) => generate(a, cli.seed, &out),
        Command::Transform(a) => transform_cmd(a, &out),
        Command::Solve(a) => solve(a, cli.seed, exec, &out),
        Command::Spectrum(a) => analysis(a, cli.seed, exec, &out, false),
        Command::Hamming(a) => analysis(a, cli.seed, exec, &out, true),
        Command::Stats(a) => stats_cmd(a, cli.seed, &out),
        Command::Experiment(a) => experiment(a, cli.seed, exec, &out),
        Command::PatternSearch(a) => pattern_search(a, exec, &out),
    }
}

struct Output<'a> {
    dir: Option<&'a Path>,
    format: Format,
}

impl Output<'_> {
    /// Writes `bytes` to `dir/name`, or to stdout without an output directory.
    fn emit(&self, name: &str, bytes: &[u8]) -> Result<()> {
        match self.dir {
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(name);
                fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            }
            None => io::stdout().lock().write_all(bytes)?,
        }
        Ok(())
    }

    fn emit_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        self.emit(name, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
    }
}

fn read_formula(path: &Path) -> Result<Formula> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    cnf::parse_dimacs(&text).with_context(|| format!("parsing {}", path.display()))
}

fn instances(a: &InstanceArgs, seed: u64) -> Result<Vec<Instance>> {
    match (&a.input, a.n, a.m) {
        (Some(p), _, _) if p.is_dir() => Ok(harness::load_directory(p)?),
        (Some(p), _, _) => {
            let formula = read_formula(p)?;
            let satisfiable = (formula.num_vars() <= harness::LABEL_MAX_VARS)
                .then(|| cnf::exhaustive_sat(&formula).map(|r| r.satisfiable))
                .transpose()?;
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok(vec![Instance { id: 0, name, formula, satisfiable }])
        }
        (None, Some(n), Some(m)) => Ok(harness::generate_instances(n, m, a.count, seed, a.sat_only)?),
        _ => bail!("give --input or both --n and --m"),
    }
}

fn generate(a: &GenerateArgs, seed: u64, out: &Output) -> Result<()> {
    let set = harness::generate_instances(a.n, a.m, a.count, seed, a.sat_only)?;
    if out.format == Format::Json {
        let list: Vec<_> = set
            .iter()
            .map(|i| json!({ "id": i.id, "name": i.name, "satisfiable": i.satisfiable, "dimacs": cnf::write_dimacs(&i.formula) }))
            .collect();
        return out.emit_json("instances.json", &json!(list));
    }
    match out.dir {
        Some(_) => {
            for i in &set {
                out.emit(&format!("instance-{:04}.cnf", i.id), cnf::write_dimacs(&i.formula).as_bytes())?;
            }
            Ok(())
        }
        None => {
            let all: String = set.iter().map(|i| cnf::write_dimacs(&i.formula)).collect();
            out.emit("", all.as_bytes())
        }
    }
}

fn build(f: &Formula, kind: TransformKind, patterns: Option<&Path>) -> Result<TransformResult> {
    match (kind, patterns) {
        (TransformKind::Algorithm, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let set = PatternSet::from_json(&text)?;
            Ok(transforms::pattern_qubo(f, &set)?)
        }
        (_, Some(_)) => bail!("--patterns only applies to the algorithm transformation"),
        (k, None) => Ok(transforms::transform(f, k)),
    }
}

fn transform_cmd(a: &TransformArgs, out: &Output) -> Result<()> {
    let f = read_formula(&a.input)?;
    let r = build(&f, a.transform, a.patterns.as_deref())?;
    match out.format {
        Format::Json => out.emit_json("qubo.json", &serde_json::to_value(&r)?),
        Format::Csv => out.emit("qubo.txt", r.qubo.to_text().as_bytes()),
    }
}

fn solve(a: &SolveArgs, seed: u64, exec: Exec, out: &Output) -> Result<()> {
    let f = read_formula(&a.input)?;
    let r = transforms::transform(&f, a.transform);
    let scaled = scale_to_precision(&r.qubo, a.precision)?;
    let schedule = auto_schedule(&scaled.qubo, &a.schedule.params(), a.iterations, seed)?;
    let opts = AnnealOptions { exec, ..AnnealOptions::new(a.runs, seed) };
    let samples = anneal(&scaled.qubo, &schedule, &opts);

    let decoded: Vec<(String, bool)> = samples
        .runs
        .iter()
        .map(|run| {
            let asg = decode(&r, &run.best_bits)?;
            Ok((asg.to_string(), cnf::is_satisfied_by(&f, &asg)))
        })
        .collect::<Result<_, TransformError>>()?;
    match out.format {
        Format::Json => {
            let value = json!({
                "transform": a.transform,
                "scale_factor": scaled.factor,
                "samples": samples,
                "assignments": decoded.iter().map(|d| json!({ "assignment": d.0, "satisfied": d.1 })).collect::<Vec<_>>(),
            });
            out.emit_json("samples.json", &value)
        }
        Format::Csv => {
            let mut text = String::from("run,seed,best_energy,iteration_found,assignment,satisfied\n");
            for (i, (run, (asg, ok))) in samples.runs.iter().zip(&decoded).enumerate() {
                text += &format!("{i},{},{},{},{asg},{ok}\n", run.seed, run.best_energy, run.iteration_found);
            }
            out.emit("samples.csv", text.as_bytes())
        }
    }
}

/// `None` means all four; an empty string means none.
fn kinds(list: &Option<String>) -> Result<Vec<TransformKind>> {
    match list.as_deref() {
        None => Ok(TransformKind::ALL.to_vec()),
        Some(s) => s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(anyhow::Error::from))
            .collect(),
    }
}

fn analysis(a: &AnalysisArgs, seed: u64, exec: Exec, out: &Output, hamming: bool) -> Result<()> {
    let set = instances(&a.instances, seed)?;
    let formulas: Vec<Formula> = set.iter().map(|i| i.formula.clone()).collect();
    let mut rows = Vec::new();
    let mut averages = Vec::new();
    for kind in kinds(&a.transforms)? {
        let report = spectrum::averaged_analysis_with(&formulas, kind, exec)?;
        rows.extend(report.rows);
        averages.push(report.average);
    }
    if out.format == Format::Json {
        let name = if hamming { "hamming.json" } else { "spectrum.json" };
        return out.emit_json(name, &json!({ "rows": rows, "averages": averages }));
    }
    let mut buf = Vec::new();
    if hamming {
        spectrum::write_hamming_csv(&rows, &mut buf)?;
        out.emit("hamming.csv", &buf)?;
        if out.dir.is_some() {
            let mut means = Vec::new();
            spectrum::write_hamming_means_csv(&averages, &mut means)?;
            out.emit("hamming_means.csv", &means)?;
        }
    } else {
        spectrum::write_levels_csv(&rows, &mut buf)?;
        out.emit("levels.csv", &buf)?;
    }
    Ok(())
}

fn stats_cmd(a: &StatsArgs, seed: u64, out: &Output) -> Result<()> {
    let set = instances(&a.instances, seed)?;
    let rows = harness::stats_report(&set, &kinds(&a.transforms)?);
    if out.format == Format::Json {
        return out.emit_json("stats.json", &serde_json::to_value(&rows)?);
    }
    let mut buf = Vec::new();
    harness::write_csv(&rows, &harness::STATS_HEADERS, &mut buf)?;
    out.emit("stats.csv", &buf)
}

fn experiment(a: &ExperimentArgs, seed: u64, exec: Exec, out: &Output) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => {
            let source = match (&a.instances.input, a.instances.n, a.instances.m) {
                (Some(p), _, _) => InstanceSource::Directory { path: p.clone() },
                (None, Some(n), Some(m)) => InstanceSource::Generate {
                    n,
                    m,
                    count: a.instances.count,
                    seed,
                    require_sat: a.instances.sat_only,
                },
                _ => bail!("give --config, --input, or both --n and --m"),
            };
            ExperimentConfig {
                source,
                transforms: kinds(&a.transforms)?,
                budgets: a.budgets.clone(),
                runs: a.runs,
                precision: a.precision,
                schedule: a.schedule.params(),
                seed,
                exec,
            }
        }
    };
    cfg.validate()?;
    let set = harness::load_instances(&cfg.source)?;
    let result = harness::run_on_instances(&cfg, &set)?;
    match out.dir {
        Some(dir) => harness::write_outputs(dir, &cfg, &set, &result)?,
        None if out.format == Format::Json => out.emit_json("", &serde_json::to_value(&result.metrics)?)?,
        None => {
            let mut buf = Vec::new();
            harness::write_csv(&result.metrics, &harness::METRICS_HEADERS, &mut buf)?;
            out.emit("", &buf)?;
        }
    }
    for e in &result.errors {
        eprintln!("{}", json!({ "warning": "cell-failed", "instance_id": e.instance_id, "transform": e.transform, "budget": e.budget, "message": e.message }));
    }
    Ok(())
}

fn pattern_search(a: &PatternSearchArgs, exec: Exec, out: &Output) -> Result<()> {
    let spec = SearchSpec { values: a.values.clone(), type_id: a.type_id, cap: a.cap };
    let found = search_patterns_with(&spec, exec)?;
    let catalog = PatternCatalog::new(&spec, &found);
    out.emit_json("patterns.json", &serde_json::to_value(&catalog)?)
}
