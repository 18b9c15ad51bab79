use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use levagg_core::aggregate::{self, Mode, QueryConfig, QueryOutcome};
use levagg_core::baselines::{run_baseline, Method};
use levagg_core::bench::{run_bench, BenchSuite, Family};
use levagg_core::blockstore::{generate_dataset, BlockManifest, DistributionSpec};
use levagg_core::leverage::DataBoundaries;
use levagg_core::preestimation::{estimate_pilot, required_sample_size, PrecisionSpec};
use levagg_core::query::parse_query;
use levagg_core::Error;

/// Approximate AVG/SUM queries over block-partitioned numeric data.
#[derive(Parser, Debug)]
#[command(name = "levagg", version)]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic block dataset and its manifest.
    Generate(GenerateArgs),
    /// Answer a query such as "SELECT AVG(v) FROM data/manifest.json PRECISION 0.1".
    Query(QueryArgs),
    /// Run one reference estimator.
    Baseline(BaselineArgs),
    /// Run an experiment family and write runs.csv and summary.json.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Distribution, e.g. normal:100,20, exponential:0.1 or uniform:1,199.
    /// Give one for all blocks or one per block.
    #[arg(long = "dist", required = true)]
    dists: Vec<DistributionSpec>,
    #[arg(long, default_value_t = 10)]
    blocks: usize,
    /// Total rows, split evenly over the blocks.
    #[arg(long, default_value_t = 1_000_000)]
    rows: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Iid,
    NonIid,
}

#[derive(Args, Debug, Clone)]
struct Tuning {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Iid)]
    mode: ModeArg,
    /// Inner boundary factor.
    #[arg(long, default_value_t = 0.5)]
    p1: f64,
    /// Outer boundary factor.
    #[arg(long, default_value_t = 2.0)]
    p2: f64,
    /// Step length factor.
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
    /// Gap reduction per iteration.
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    /// Convergence threshold in value units.
    #[arg(long, default_value_t = 1e-3)]
    thr: f64,
    /// Pilot precision multiplier.
    #[arg(long, default_value_t = PrecisionSpec::DEFAULT_T_E)]
    te: f64,
    /// Fixed leverage allocating parameter for every block.
    #[arg(long)]
    q: Option<f64>,
    /// Fraction of the computed sampling rate actually drawn.
    #[arg(long, default_value_t = 1.0)]
    rate_factor: f64,
}

impl Tuning {
    fn config(&self, e: f64, beta: f64) -> QueryConfig {
        let mut c = QueryConfig::new(e, beta, self.seed);
        c.mode = match self.mode {
            ModeArg::Iid => Mode::Iid,
            ModeArg::NonIid => Mode::NonIid,
        };
        c.p1 = self.p1;
        c.p2 = self.p2;
        c.iteration.lambda = self.lambda;
        c.iteration.eta = self.eta;
        c.iteration.thr = self.thr;
        c.precision.t_e = self.te;
        c.q_override = self.q;
        c.rate_factor = self.rate_factor;
        c
    }
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Query text.
    query: String,
    #[command(flatten)]
    tuning: Tuning,
    /// Continue a run saved with --save-state at the query's finer precision.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Save the state needed to refine this answer later.
    #[arg(long)]
    save_state: Option<PathBuf>,
    /// Write the per-iteration trace as CSV.
    #[arg(long)]
    emit_trace: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Sample budget; derived from --precision when absent.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    precision: f64,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[command(flatten)]
    tuning: Tuning,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// accuracy, precision-sweep, confidence-sweep, block-sweep, boundary-sweep,
    /// sample-efficiency, non-iid, exponential or uniform.
    #[arg(long, value_parser = parse_family)]
    family: Family,
    /// Number of seeded runs per setting (seeds 1..=N).
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Rows per dataset.
    #[arg(long, default_value_t = 1_000_000)]
    scale: u64,
    /// Blocks per dataset; the non-iid family always uses five.
    #[arg(long, default_value_t = 10)]
    blocks: usize,
    /// Seed for dataset generation, separate from the query seeds.
    #[arg(long, default_value_t = 2024)]
    data_seed: u64,
    /// Root for the timestamped result directory.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Dataset cache.
    #[arg(long, default_value = "bench-data")]
    cache: PathBuf,
    /// Exit with status 3 when a run misses its expected band.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    tuning: Tuning,
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let kind = err.downcast_ref::<Error>().map_or("data", Error::kind);
        let code = match kind {
            "usage" | "resume" => 1,
            _ => 2,
        };
        Failure {
            code,
            kind,
            message: format!("{err:#}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let record = serde_json::json!({ "error": f.kind, "message": f.message });
            eprintln!("{record}");
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Query(a) => query(a),
        Command::Baseline(a) => baseline(a),
        Command::Bench(a) => bench(a),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        kind: "usage",
        message: msg.into(),
    }
}

fn generate(a: GenerateArgs) -> Result<u8, Failure> {
    if a.blocks == 0 || a.rows < a.blocks as u64 {
        return Err(usage(format!("cannot split {} rows into {} blocks", a.rows, a.blocks)));
    }
    let specs = match a.dists.len() {
        1 => vec![a.dists[0]; a.blocks],
        n if n == a.blocks => a.dists,
        n => return Err(usage(format!("{n} distributions given for {} blocks", a.blocks))),
    };
    let b = a.blocks as u64;
    let sizes: Vec<u64> = (0..b).map(|j| a.rows / b + u64::from(j < a.rows % b)).collect();
    let m = generate_dataset(&specs, &sizes, a.seed, &a.out).map_err(anyhow::Error::from)?;
    println!(
        "{}",
        serde_json::json!({
            "manifest": a.out.join(levagg_core::blockstore::MANIFEST_FILE),
            "blocks": m.block_count(),
            "rows": m.total,
        })
    );
    Ok(0)
}

fn load_manifest(path: &Path) -> anyhow::Result<BlockManifest> {
    let m = BlockManifest::load(path)?;
    m.validate()?;
    Ok(m)
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn query(a: QueryArgs) -> Result<u8, Failure> {
    let q = parse_query(&a.query).map_err(anyhow::Error::from)?;
    let mut cfg = a.tuning.config(q.precision, q.confidence);
    cfg.emit_trace = a.emit_trace.is_some();
    let manifest = load_manifest(&q.dataset)?;
    let outcome: QueryOutcome = match &a.resume {
        Some(path) => {
            let state = aggregate::load_state(path).map_err(anyhow::Error::from)?;
            aggregate::resume(&state, &manifest, q.aggregate, &cfg).map_err(anyhow::Error::from)?
        }
        None => aggregate::run_query(&manifest, q.aggregate, &cfg).map_err(anyhow::Error::from)?,
    };
    if let Some(path) = &a.save_state {
        aggregate::save_state(&outcome.state, path).map_err(anyhow::Error::from)?;
    }
    if let Some(path) = &a.emit_trace {
        let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        outcome.report.write_trace_csv(f).map_err(anyhow::Error::from)?;
    }
    let mut report = outcome.report;
    // The CSV carries the trace; keep the JSON report compact.
    report.trace.clear();
    write_json(a.out.as_deref(), &report)?;
    Ok(0)
}

fn baseline(a: BaselineArgs) -> Result<u8, Failure> {
    let manifest = load_manifest(&a.manifest)?;
    let cfg = a.tuning.config(a.precision, a.confidence);
    cfg.validate().map_err(anyhow::Error::from)?;
    let needs_pilot = a.samples.is_none() || a.method == Method::Mvb;
    let pilot = if needs_pilot {
        Some(estimate_pilot(&manifest, &cfg.precision, cfg.seed, false).map_err(anyhow::Error::from)?)
    } else {
        None
    };
    let samples = match (a.samples, &pilot) {
        (Some(n), _) => n,
        (None, Some(p)) => required_sample_size(a.precision, a.confidence, p.sigma_hat).map_err(anyhow::Error::from)?,
        (None, None) => unreachable!("pilot runs when no budget is given"),
    };
    let boundaries = match (&pilot, a.method) {
        (Some(p), Method::Mvb) => {
            Some(DataBoundaries::new(p.sketch0, p.sigma_hat, cfg.p1, cfg.p2).map_err(anyhow::Error::from)?)
        }
        _ => None,
    };
    let res = run_baseline(&manifest, a.method, samples, cfg.seed, boundaries.as_ref()).map_err(anyhow::Error::from)?;
    write_json(None, &res)?;
    Ok(0)
}

fn bench(a: BenchArgs) -> Result<u8, Failure> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let mut suite = BenchSuite::new(a.family, (1..=a.seeds).collect());
    suite.scale = a.scale;
    suite.blocks = a.blocks;
    suite.data_seed = a.data_seed;
    suite.template = a.tuning.config(0.1, 0.95);
    let out = run_bench(&suite, &a.out, &a.cache).map_err(anyhow::Error::from)?;
    for c in &out.summary.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!(
        "{}",
        serde_json::json!({ "dir": out.dir, "all_passed": out.summary.all_passed() })
    );
    Ok(if a.check && !out.summary.all_passed() { 3 } else { 0 })
}
