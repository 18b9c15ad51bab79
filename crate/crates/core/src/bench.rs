//! Seeded experiment harness.
//!
//! A family expands into scenarios (one dataset plus one parameter setting).
//! Every scenario runs the leverage estimator and, where the family asks for
//! them, the baselines, once per seed. Results go to `runs.csv` and
//! `summary.json` in a fresh directory, and [`check`] compares the summary
//! with the expected bands.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{run_query, Mode, QueryConfig};
use crate::baselines::{run_baseline, Method};
use crate::blockstore::{generate_dataset, BlockManifest, DistributionSpec, MANIFEST_FILE};
use crate::error::{invalid, Error, Result};
use crate::leverage::DataBoundaries;
use crate::preestimation::required_sample_size;
use crate::query::Aggregate;

pub const ISLA: &str = "ISLA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Accuracy,
    PrecisionSweep,
    ConfidenceSweep,
    BlockSweep,
    BoundarySweep,
    SampleEfficiency,
    NonIid,
    Exponential,
    Uniform,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Accuracy,
        Family::PrecisionSweep,
        Family::ConfidenceSweep,
        Family::BlockSweep,
        Family::BoundarySweep,
        Family::SampleEfficiency,
        Family::NonIid,
        Family::Exponential,
        Family::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Accuracy => "accuracy",
            Family::PrecisionSweep => "precision-sweep",
            Family::ConfidenceSweep => "confidence-sweep",
            Family::BlockSweep => "block-sweep",
            Family::BoundarySweep => "boundary-sweep",
            Family::SampleEfficiency => "sample-efficiency",
            Family::NonIid => "non-iid",
            Family::Exponential => "exponential",
            Family::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| invalid(format!("unknown bench family '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSuite {
    pub family: Family,
    pub seeds: Vec<u64>,
    /// Rows per dataset.
    pub scale: u64,
    pub blocks: usize,
    /// Seed of the generated datasets, independent of the query seeds.
    pub data_seed: u64,
    /// Parameters shared by every estimator run; `e`, `beta` and `seed` are
    /// overwritten per run.
    pub template: QueryConfig,
}

impl BenchSuite {
    pub fn new(family: Family, seeds: Vec<u64>) -> Self {
        Self {
            family,
            seeds,
            scale: 1_000_000,
            blocks: 10,
            data_seed: 2024,
            template: QueryConfig::new(0.1, 0.95, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("a bench suite needs at least one seed"));
        }
        if self.blocks == 0 || self.scale < self.blocks as u64 * 5 {
            return Err(invalid(format!(
                "scale {} is too small for {} blocks",
                self.scale, self.blocks
            )));
        }
        Ok(())
    }
}

/// One dataset and parameter setting within a family.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Suffix distinguishing settings in a sweep; empty otherwise.
    pub label: String,
    pub specs: Vec<DistributionSpec>,
    pub sizes: Vec<u64>,
    pub truth: f64,
    pub config: QueryConfig,
    /// Baselines, each run with the full sample budget.
    pub baselines: Vec<Method>,
}

impl Scenario {
    fn method_name(&self, method: &str) -> String {
        if self.label.is_empty() {
            method.to_string()
        } else {
            format!("{method}[{}]", self.label)
        }
    }
}

fn equal_sizes(total: u64, blocks: usize) -> Vec<u64> {
    let b = blocks as u64;
    (0..b).map(|j| total / b + u64::from(j < total % b)).collect()
}

fn normal(mu: f64, sigma: f64) -> DistributionSpec {
    DistributionSpec::Normal { mu, sigma }
}

pub fn scenarios(suite: &BenchSuite) -> Vec<Scenario> {
    let iid = |spec: DistributionSpec, blocks: usize| (vec![spec; blocks], equal_sizes(suite.scale, blocks));
    let with = |e: f64, beta: f64| {
        let mut c = suite.template.clone();
        c.precision.e = e;
        c.precision.beta = beta;
        c
    };
    let base = |label: String, spec: DistributionSpec, cfg: QueryConfig, baselines: Vec<Method>| {
        let (specs, sizes) = iid(spec, suite.blocks);
        Scenario {
            label,
            truth: spec.mean(),
            specs,
            sizes,
            config: cfg,
            baselines,
        }
    };
    let n100 = normal(100.0, 20.0);
    match suite.family {
        Family::Accuracy => vec![base(String::new(), n100, with(0.1, 0.95), Method::ALL.to_vec())],
        Family::PrecisionSweep => [0.025, 0.05, 0.1, 0.2]
            .into_iter()
            .map(|e| base(format!("e={e}"), n100, with(e, 0.95), vec![]))
            .collect(),
        Family::ConfidenceSweep => [0.8, 0.9, 0.95, 0.99]
            .into_iter()
            .map(|b| base(format!("beta={b}"), n100, with(0.1, b), vec![]))
            .collect(),
        Family::BlockSweep => [1usize, 5, 10, 20]
            .into_iter()
            .map(|b| {
                let (specs, sizes) = iid(n100, b);
                Scenario {
                    label: format!("b={b}"),
                    specs,
                    sizes,
                    truth: 100.0,
                    config: with(0.1, 0.95),
                    baselines: vec![],
                }
            })
            .collect(),
        Family::BoundarySweep => [(0.25, 2.0), (0.5, 2.0), (0.75, 2.0), (0.5, 1.5), (0.5, 3.0)]
            .into_iter()
            .map(|(p1, p2)| {
                let mut c = with(0.1, 0.95);
                c.p1 = p1;
                c.p2 = p2;
                base(format!("p1={p1},p2={p2}"), n100, c, vec![])
            })
            .collect(),
        Family::SampleEfficiency => {
            let mut c = with(0.5, 0.95);
            c.rate_factor = 1.0 / 3.0;
            vec![base(String::new(), n100, c, vec![Method::Us, Method::Sts])]
        }
        Family::NonIid => {
            let specs = vec![
                normal(100.0, 20.0),
                normal(50.0, 10.0),
                normal(80.0, 30.0),
                normal(150.0, 60.0),
                normal(120.0, 40.0),
            ];
            let mut c = with(0.5, 0.95);
            c.mode = Mode::NonIid;
            vec![Scenario {
                label: String::new(),
                sizes: equal_sizes(suite.scale, specs.len()),
                specs,
                truth: 100.0,
                config: c,
                baselines: vec![Method::Sts],
            }]
        }
        Family::Exponential => [0.05, 0.1, 0.15, 0.2]
            .into_iter()
            .map(|gamma| {
                let spec = DistributionSpec::Exponential { gamma };
                base(
                    format!("gamma={gamma}"),
                    spec,
                    with(0.1, 0.95),
                    vec![Method::Mv, Method::Mvb],
                )
            })
            .collect(),
        Family::Uniform => vec![base(
            String::new(),
            DistributionSpec::Uniform { lo: 1.0, hi: 199.0 },
            with(0.1, 0.95),
            vec![Method::Mv, Method::Mvb],
        )],
    }
}

/// Loads the dataset for `specs`/`sizes` from `cache`, generating it on first use.
pub fn cached_dataset(cache: &Path, specs: &[DistributionSpec], sizes: &[u64], seed: u64) -> Result<BlockManifest> {
    let key = serde_json::to_vec(&(specs, sizes, seed))?;
    let digest = hex::encode(Sha256::digest(&key));
    let dir = cache.join(&digest[..16]);
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        if let Ok(m) = BlockManifest::load(&manifest_path) {
            if m.validate().is_ok() {
                return Ok(m);
            }
        }
        log::warn!("regenerating unusable cached dataset in {}", dir.display());
    }
    // Generate beside the final location so concurrent callers never see a partial dataset.
    let staging = cache.join(format!("{}.{}.tmp", &digest[..16], std::process::id()));
    generate_dataset(specs, sizes, seed, &staging)?;
    match fs::rename(&staging, &dir) {
        Ok(()) => {}
        Err(_) if manifest_path.exists() => {
            let _ = fs::remove_dir_all(&staging);
        }
        Err(e) => return Err(Error::io(&dir, e)),
    }
    BlockManifest::load(&manifest_path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub seed: u64,
    pub answer: f64,
    pub abs_error: f64,
    pub samples: u64,
    pub wall_ms: f64,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t0 = Instant::now();
    let out = f()?;
    Ok((out, t0.elapsed().as_secs_f64() * 1e3))
}

/// Every method of one scenario on one seed.
pub fn run_scenario(manifest: &BlockManifest, sc: &Scenario, seed: u64) -> Result<Vec<RunRow>> {
    let mut cfg = sc.config.clone();
    cfg.seed = seed;
    let (outcome, ms) = timed(|| run_query(manifest, Aggregate::Avg, &cfg))?;
    let report = outcome.report;
    let mut rows = vec![RunRow {
        method: sc.method_name(ISLA),
        seed,
        answer: report.answer,
        abs_error: (report.answer - sc.truth).abs(),
        samples: report.samples + report.pilot_size,
        wall_ms: ms,
    }];
    if sc.baselines.is_empty() {
        return Ok(rows);
    }
    let budget =
        required_sample_size(cfg.precision.e, cfg.precision.beta, report.sigma_hat)?.max(manifest.block_count() as u64);
    let boundaries = if report.sigma_hat > 0.0 {
        Some(DataBoundaries::new(report.sketch0, report.sigma_hat, cfg.p1, cfg.p2)?)
    } else {
        None
    };
    for &m in &sc.baselines {
        let (res, ms) = timed(|| run_baseline(manifest, m, budget, seed, boundaries.as_ref()))?;
        rows.push(RunRow {
            method: sc.method_name(&m.to_string()),
            seed,
            answer: res.answer,
            abs_error: (res.answer - sc.truth).abs(),
            samples: res.samples_used,
            wall_ms: ms,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub truth: f64,
    /// Precision the scenario asked for.
    pub e: f64,
    pub runs: usize,
    pub mean_answer: f64,
    pub sd_answer: f64,
    pub min_answer: f64,
    pub max_answer: f64,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    pub within_e: usize,
    pub mean_samples: f64,
    pub mean_wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub family: Family,
    pub seeds: Vec<u64>,
    pub scale: u64,
    pub data_seed: u64,
    pub methods: BTreeMap<String, MethodSummary>,
    pub checks: Vec<CheckResult>,
}

impl BenchSummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn summarize_rows(rows: &[RunRow], truths: &BTreeMap<String, (f64, f64)>) -> BTreeMap<String, MethodSummary> {
    let mut groups: BTreeMap<&str, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.method).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(name, rs)| {
            let n = rs.len() as f64;
            let (truth, e) = truths.get(name).copied().unwrap_or((f64::NAN, f64::NAN));
            let mean = rs.iter().map(|r| r.answer).sum::<f64>() / n;
            let var = if rs.len() > 1 {
                rs.iter().map(|r| (r.answer - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let summary = MethodSummary {
                truth,
                e,
                runs: rs.len(),
                mean_answer: mean,
                sd_answer: var.sqrt(),
                min_answer: rs.iter().map(|r| r.answer).fold(f64::INFINITY, f64::min),
                max_answer: rs.iter().map(|r| r.answer).fold(f64::NEG_INFINITY, f64::max),
                mean_abs_error: rs.iter().map(|r| r.abs_error).sum::<f64>() / n,
                max_abs_error: rs.iter().map(|r| r.abs_error).fold(0.0, f64::max),
                within_e: rs.iter().filter(|r| r.abs_error <= e).count(),
                mean_samples: rs.iter().map(|r| r.samples as f64).sum::<f64>() / n,
                mean_wall_ms: rs.iter().map(|r| r.wall_ms).sum::<f64>() / n,
            };
            (name.to_string(), summary)
        })
        .collect()
}

/// Share of `rows` of `method` whose answer satisfies `pred`.
fn share(rows: &[RunRow], method: &str, pred: impl Fn(&RunRow) -> bool) -> (usize, usize) {
    let rs: Vec<&RunRow> = rows.iter().filter(|r| r.method == method).collect();
    (rs.iter().filter(|r| pred(r)).count(), rs.len())
}

fn at_least(name: &str, (hit, n): (usize, usize), frac: f64, what: &str) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: n > 0 && hit as f64 >= frac * n as f64 - 1e-9,
        detail: format!("{hit}/{n} runs {what} (need {:.0}%)", frac * 100.0),
    }
}

/// Expected bands for a family, evaluated on its rows.
pub fn check(family: Family, rows: &[RunRow], methods: &BTreeMap<String, MethodSummary>) -> Vec<CheckResult> {
    let mut out = Vec::new();
    match family {
        Family::Accuracy => {
            out.push(at_least(
                "isla-within-e",
                share(rows, ISLA, |r| r.abs_error <= 0.1),
                0.9,
                "within 0.1",
            ));
            if let Some(s) = methods.get(ISLA) {
                let off = (s.mean_answer - s.truth).abs();
                out.push(CheckResult {
                    name: "isla-mean".into(),
                    passed: off <= 0.05,
                    detail: format!("mean answer {:.4}, off by {off:.4} (need <= 0.05)", s.mean_answer),
                });
            }
            out.push(at_least(
                "mv-band",
                share(rows, "MV", |r| (103.7..=104.3).contains(&r.answer)),
                1.0,
                "in [103.7, 104.3]",
            ));
            out.push(at_least(
                "mvb-band",
                share(rows, "MVB", |r| (100.2..=100.9).contains(&r.answer)),
                0.8,
                "in [100.2, 100.9]",
            ));
        }
        Family::SampleEfficiency => {
            out.push(at_least(
                "isla-within-e",
                share(rows, ISLA, |r| r.abs_error <= 0.5),
                0.9,
                "within 0.5",
            ));
        }
        Family::Exponential => {
            for gamma in [0.05, 0.1, 0.15, 0.2] {
                let truth = 1.0 / gamma;
                let isla = format!("{ISLA}[gamma={gamma}]");
                out.push(at_least(
                    &format!("isla-rel-error[gamma={gamma}]"),
                    share(rows, &isla, |r| r.abs_error / truth <= 0.10),
                    1.0,
                    "within 10% of 1/gamma",
                ));
                let mv = format!("MV[gamma={gamma}]");
                out.push(at_least(
                    &format!("mv-rel-error[gamma={gamma}]"),
                    share(rows, &mv, |r| (r.answer - 2.0 * truth).abs() / (2.0 * truth) <= 0.03),
                    1.0,
                    "within 3% of 2/gamma",
                ));
            }
        }
        Family::Uniform => {
            out.push(at_least(
                "isla-band",
                share(rows, ISLA, |r| (99.3..=100.2).contains(&r.answer)),
                0.8,
                "in [99.3, 100.2]",
            ));
            out.push(at_least(
                "mv-band",
                share(rows, "MV", |r| (131.5..=133.5).contains(&r.answer)),
                1.0,
                "in [131.5, 133.5]",
            ));
        }
        Family::NonIid => {
            out.push(at_least(
                "isla-within-e",
                share(rows, ISLA, |r| r.abs_error <= 0.5),
                0.8,
                "within 0.5",
            ));
        }
        Family::PrecisionSweep => {
            let fine = methods.get(&format!("{ISLA}[e=0.025]"));
            let coarse = methods.get(&format!("{ISLA}[e=0.2]"));
            if let (Some(f), Some(c)) = (fine, coarse) {
                out.push(CheckResult {
                    name: "error-grows-with-e".into(),
                    passed: c.mean_abs_error >= f.mean_abs_error,
                    detail: format!(
                        "mean |error| {:.4} at e=0.2 vs {:.4} at e=0.025",
                        c.mean_abs_error, f.mean_abs_error
                    ),
                });
            }
        }
        Family::ConfidenceSweep | Family::BlockSweep | Family::BoundarySweep => {}
    }
    out
}

/// Runs every scenario of `suite` on every seed; rows come back in
/// scenario-major, seed-minor order regardless of scheduling.
pub fn run_family(suite: &BenchSuite, cache: &Path) -> Result<(Vec<RunRow>, BenchSummary)> {
    suite.validate()?;
    suite.template.validate()?;
    fs::create_dir_all(cache).map_err(|e| Error::io(cache, e))?;
    let scs = scenarios(suite);
    let mut rows = Vec::new();
    let mut truths = BTreeMap::new();
    for sc in &scs {
        let manifest = cached_dataset(cache, &sc.specs, &sc.sizes, suite.data_seed)?;
        let per_seed = suite
            .seeds
            .par_iter()
            .map(|&seed| run_scenario(&manifest, sc, seed))
            .collect::<Result<Vec<_>>>()?;
        rows.extend(per_seed.into_iter().flatten());
        let mut methods = vec![sc.method_name(ISLA)];
        methods.extend(sc.baselines.iter().map(|m| sc.method_name(&m.to_string())));
        for m in methods {
            truths.insert(m, (sc.truth, sc.config.precision.e));
        }
    }
    let methods = summarize_rows(&rows, &truths);
    let checks = check(suite.family, &rows, &methods);
    let summary = BenchSummary {
        family: suite.family,
        seeds: suite.seeds.clone(),
        scale: suite.scale,
        data_seed: suite.data_seed,
        methods,
        checks,
    };
    Ok((rows, summary))
}

/// Creates `root/<family>-<unix millis>`, never reusing an existing directory.
pub fn fresh_output_dir(root: &Path, family: Family) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    for attempt in 0u32.. {
        let name = if attempt == 0 {
            format!("{family}-{stamp}")
        } else {
            format!("{family}-{stamp}-{attempt}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded attempt counter")
}

pub fn write_rows(path: &Path, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutput {
    pub dir: PathBuf,
    pub summary: BenchSummary,
}

/// Runs a suite and writes `runs.csv` and `summary.json` into a fresh directory under `out_root`.
pub fn run_bench(suite: &BenchSuite, out_root: &Path, cache: &Path) -> Result<BenchOutput> {
    let (rows, summary) = run_family(suite, cache)?;
    let dir = fresh_output_dir(out_root, suite.family)?;
    write_rows(&dir.join("runs.csv"), &rows)?;
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(dir.join("summary.json"), text).map_err(|e| Error::io(dir.join("summary.json"), e))?;
    Ok(BenchOutput { dir, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, answer: f64, truth: f64) -> RunRow {
        RunRow {
            method: method.into(),
            seed: 0,
            answer,
            abs_error: (answer - truth).abs(),
            samples: 1,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("nope".parse::<Family>().is_err());
    }

    #[test]
    fn scenario_shapes() {
        let suite = BenchSuite::new(Family::NonIid, vec![1]);
        let sc = scenarios(&suite);
        assert_eq!(sc.len(), 1);
        assert_eq!(sc[0].sizes.iter().sum::<u64>(), 1_000_000);
        let weighted: f64 = sc[0].specs.iter().map(|s| s.mean()).sum::<f64>() / 5.0;
        assert_eq!(weighted, 100.0);
        assert_eq!(sc[0].config.mode, Mode::NonIid);

        let suite = BenchSuite::new(Family::Exponential, vec![1]);
        let truths: Vec<f64> = scenarios(&suite).iter().map(|s| s.truth).collect();
        assert_eq!(truths, vec![20.0, 10.0, 1.0 / 0.15, 5.0]);

        let suite = BenchSuite::new(Family::SampleEfficiency, vec![1]);
        assert!((scenarios(&suite)[0].config.rate_factor - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_sizes_cover_total() {
        assert_eq!(equal_sizes(10, 3), vec![4, 3, 3]);
        assert_eq!(equal_sizes(1_000_000, 10).iter().sum::<u64>(), 1_000_000);
    }

    #[test]
    fn summary_and_checks() {
        let rows = vec![
            row(ISLA, 100.05, 100.0),
            row(ISLA, 99.98, 100.0),
            row(ISLA, 100.3, 100.0),
            row("MV", 104.0, 100.0),
        ];
        let truths = BTreeMap::from([(ISLA.to_string(), (100.0, 0.1)), ("MV".to_string(), (100.0, 0.1))]);
        let m = summarize_rows(&rows, &truths);
        assert_eq!(m[ISLA].runs, 3);
        assert_eq!(m[ISLA].within_e, 2);
        assert!((m[ISLA].mean_answer - 100.11).abs() < 1e-9);
        let checks = check(Family::Accuracy, &rows, &m);
        let by_name: BTreeMap<_, _> = checks.iter().map(|c| (c.name.as_str(), c.passed)).collect();
        assert!(!by_name["isla-within-e"]);
        assert!(!by_name["isla-mean"]);
        assert!(by_name["mv-band"]);
        assert!(!by_name["mvb-band"]);
    }

    #[test]
    fn output_dirs_are_fresh() {
        let tmp = tempfile::tempdir().unwrap();
        let a = fresh_output_dir(tmp.path(), Family::Uniform).unwrap();
        let b = fresh_output_dir(tmp.path(), Family::Uniform).unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }
}
