//! Query orchestration: pilot, per-block estimation, summarisation, and
//! resumption from persisted region moments.
//!
//! Every block is handled independently. Draws are seeded from
//! `(seed, block, counter)` so the result does not depend on scheduling. When
//! the pilot sees a non-positive value the whole computation runs on values
//! translated by `d`, and `d` is subtracted again before anything is reported.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blockstore::{derive_seed, domain, draw_uniform, write_atomic, BlockDescriptor, BlockManifest};
use crate::error::{invalid, Error, Result};
use crate::iteration::{
    initial_d, iterate, select_case, BalanceBand, BlockAnswer, IterationConfig, ModulationCase, TraceStep,
};
use crate::leverage::{
    deviation_degree, linear_estimator, DataBoundaries, LinearEstimator, QSelector, Region, RegionAccumulator,
};
use crate::preestimation::{estimate_pilot, required_sample_size, sampling_rate, PilotStats, PrecisionSpec};
use crate::query::Aggregate;
use crate::scalar::Scalar;

pub const STATE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Iid,
    NonIid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub precision: PrecisionSpec,
    pub iteration: IterationConfig<f64>,
    pub p1: f64,
    pub p2: f64,
    pub balance_band: BalanceBand,
    pub q_selector: QSelector,
    /// Fixed `q` for every block instead of the deviation-based choice.
    pub q_override: Option<f64>,
    pub mode: Mode,
    pub seed: u64,
    /// Multiplier on the sampling rate from the sample-size formula.
    pub rate_factor: f64,
    pub emit_trace: bool,
}

impl QueryConfig {
    pub fn new(e: f64, beta: f64, seed: u64) -> Self {
        Self {
            precision: PrecisionSpec::new(e, beta),
            iteration: IterationConfig::default(),
            p1: 0.5,
            p2: 2.0,
            balance_band: BalanceBand::default(),
            q_selector: QSelector::default(),
            q_override: None,
            mode: Mode::Iid,
            seed,
            rate_factor: 1.0,
            emit_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.precision.validate()?;
        self.iteration.validate()?;
        self.balance_band.validate()?;
        self.q_selector.validate()?;
        if !(self.p1 > 0.0 && self.p1 < self.p2 && self.p2.is_finite()) {
            return Err(invalid(format!(
                "boundary factors need 0 < p1 < p2, got {} and {}",
                self.p1, self.p2
            )));
        }
        if let Some(q) = self.q_override {
            if !(q > 0.0 && q.is_finite()) {
                return Err(invalid(format!("q override must be positive, got {q}")));
            }
        }
        if !(self.rate_factor > 0.0 && self.rate_factor <= 1.0) {
            return Err(invalid(format!(
                "rate factor must lie in (0, 1], got {}",
                self.rate_factor
            )));
        }
        Ok(())
    }

    /// Digest of everything a resumed run must share with the original, except `e`.
    fn fingerprint(&self, manifest: &BlockManifest) -> Result<String> {
        #[derive(Serialize)]
        struct Fingerprint<'a> {
            beta: f64,
            t_e: f64,
            iteration: &'a IterationConfig<f64>,
            p1: f64,
            p2: f64,
            balance_band: &'a BalanceBand,
            q_selector: &'a QSelector,
            q_override: Option<f64>,
            mode: Mode,
            seed: u64,
            rate_factor: f64,
            sizes: Vec<u64>,
        }
        let fp = Fingerprint {
            beta: self.precision.beta,
            t_e: self.precision.t_e,
            iteration: &self.iteration,
            p1: self.p1,
            p2: self.p2,
            balance_band: &self.balance_band,
            q_selector: &self.q_selector,
            q_override: self.q_override,
            mode: self.mode,
            seed: self.seed,
            rate_factor: self.rate_factor,
            sizes: manifest.sizes(),
        };
        let bytes = serde_json::to_vec(&fp)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Why a block answer bypassed the modulation loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// No spread in the pilot, so no regions.
    ZeroSpread,
    /// No sample landed in `S` or in `L`.
    EmptyRegion,
    /// The moments cannot define an estimator.
    Degenerate,
    /// `k` too close to zero to move the estimate.
    FlatSlope,
}

/// Region moments of the values drawn for one block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockSamples {
    pub acc_s: RegionAccumulator<f64>,
    pub acc_l: RegionAccumulator<f64>,
    /// Every drawn value, used by the uniform fallback.
    pub all: RegionAccumulator<f64>,
}

impl BlockSamples {
    pub fn drawn(&self) -> u64 {
        self.all.count()
    }

    fn merge(&mut self, other: &Self) {
        self.acc_s.merge(&other.acc_s);
        self.acc_l.merge(&other.acc_l);
        self.all.merge(&other.all);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartialAnswer {
    pub block: usize,
    /// In the shifted domain.
    pub answer: BlockAnswer<f64>,
    pub samples: BlockSamples,
    pub dev: Option<f64>,
    pub q: Option<f64>,
    pub estimator: Option<LinearEstimator<f64>>,
    pub fallback: Option<Fallback>,
    pub trace: Vec<TraceStep<f64>>,
}

impl PartialAnswer {
    pub fn samples_drawn(&self) -> u64 {
        self.samples.drawn()
    }
}

/// Per-block inputs fixed by the pilot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSetup {
    /// Shifted domain.
    pub sketch0: f64,
    pub sigma: f64,
    /// Shifted domain; `None` when `sigma` is zero.
    pub boundaries: Option<DataBoundaries<f64>>,
}

impl BlockSetup {
    fn new(sketch0: f64, sigma: f64, cfg: &QueryConfig) -> Result<Self> {
        let boundaries = if sigma > 0.0 {
            Some(DataBoundaries::new(sketch0, sigma, cfg.p1, cfg.p2)?)
        } else {
            None
        };
        Ok(Self {
            sketch0,
            sigma,
            boundaries,
        })
    }
}

/// `d = 1 - min_seen` if `min_seen <= 0`, else `0`.
pub fn shift_for_negatives(min_seen: f64) -> f64 {
    if min_seen <= 0.0 {
        1.0 - min_seen
    } else {
        0.0
    }
}

/// `Σ avg_j |B_j| / M`.
///
/// The weighted terms are sorted and summed pairwise, so the result is
/// bit-identical under any reordering of the blocks.
pub fn summarize<T: Scalar>(avgs: &[T], sizes: &[u64], total: u64) -> Result<T> {
    if avgs.len() != sizes.len() || avgs.is_empty() {
        return Err(Error::Mismatch(format!(
            "{} partial answers for {} blocks",
            avgs.len(),
            sizes.len()
        )));
    }
    let sum: u128 = sizes.iter().map(|&s| s as u128).sum();
    if sum != total as u128 || total == 0 {
        return Err(Error::Mismatch(format!("block sizes sum to {sum}, expected {total}")));
    }
    let mut terms: Vec<T> = avgs
        .iter()
        .zip(sizes)
        .map(|(a, &s)| a.clone() * T::from_count(s))
        .collect();
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(pairwise_sum(&terms) / T::from_count(total))
}

fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::zero(),
        1 => xs[0].clone(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Variance-weighted rates: `blev_i = (1 + σ_i²) / (b + Σσ_j²)`,
/// `rate_i = min(1, r·M·blev_i / |B_i|)`.
pub fn block_sampling_rates(sigmas: &[f64], r: f64, total: u64, sizes: &[u64]) -> Result<Vec<f64>> {
    if sigmas.len() != sizes.len() || sizes.is_empty() {
        return Err(Error::Mismatch(format!(
            "{} deviations for {} blocks",
            sigmas.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(invalid("block sizes must be positive"));
    }
    let denom = sizes.len() as f64 + sigmas.iter().map(|s| s * s).sum::<f64>();
    Ok(sigmas
        .iter()
        .zip(sizes)
        .map(|(s, &n)| {
            let blev = (1.0 + s * s) / denom;
            (r * total as f64 * blev / n as f64).min(1.0)
        })
        .collect())
}

/// `⌈rate·|B_j|⌉`.
fn draws_for(rate: f64, size: u64) -> u64 {
    (rate * size as f64).ceil() as u64
}

/// Streams `n` draws from one block into its region moments.
///
/// A value that is still non-positive after the shift is tolerated in the
/// outer and middle regions, which carry no leverage, and aborts the run if
/// it would enter `S` or `L`.
pub fn draw_block(
    block: &BlockDescriptor,
    block_id: usize,
    n: u64,
    seed: u64,
    setup: &BlockSetup,
    shift: f64,
) -> Result<BlockSamples> {
    let mut out = BlockSamples::default();
    for raw in draw_uniform(block, block_id as u64, n, seed)? {
        let raw = raw?;
        let a = raw + shift;
        out.all.push(a);
        let region = setup.boundaries.as_ref().map(|b| b.classify(&a));
        if a <= 0.0 && matches!(region, Some(Region::Small | Region::Large)) {
            return Err(Error::ShiftExceeded { value: raw, shift });
        }
        match region {
            Some(Region::Small) => out.acc_s.push(a),
            Some(Region::Large) => out.acc_l.push(a),
            _ => {}
        }
    }
    Ok(out)
}

/// Turns accumulated moments into a block answer.
pub fn finish_block(
    block: usize,
    samples: BlockSamples,
    setup: &BlockSetup,
    cfg: &QueryConfig,
) -> Result<PartialAnswer> {
    if samples.drawn() == 0 {
        return Err(Error::EmptyStream);
    }
    let uniform_mean = samples.all.sum() / samples.drawn() as f64;
    let mut part = PartialAnswer {
        block,
        answer: BlockAnswer {
            avg: uniform_mean,
            alpha_final: 0.0,
            sketch_final: setup.sketch0,
            iterations: 0,
            case: ModulationCase::Balanced,
            fallback: true,
        },
        samples,
        dev: None,
        q: None,
        estimator: None,
        fallback: None,
        trace: Vec::new(),
    };
    if setup.boundaries.is_none() {
        part.fallback = Some(Fallback::ZeroSpread);
        return Ok(part);
    }
    let (u, v) = (part.samples.acc_s.count(), part.samples.acc_l.count());
    if u == 0 || v == 0 {
        part.fallback = Some(Fallback::EmptyRegion);
        return Ok(part);
    }
    let dev = deviation_degree(u, v)?;
    let q = cfg.q_override.unwrap_or_else(|| cfg.q_selector.select(dev));
    part.dev = Some(dev);
    part.q = Some(q);
    let est = match linear_estimator(&part.samples.acc_s, &part.samples.acc_l, q) {
        Ok(est) => est,
        Err(Error::Degenerate(_)) => {
            part.fallback = Some(Fallback::Degenerate);
            return Ok(part);
        }
        Err(e) => return Err(e),
    };
    let plan = select_case(&initial_d(&est, &setup.sketch0), u, v, &cfg.balance_band);
    let trace = cfg.emit_trace.then_some(&mut part.trace);
    let answer = iterate(&est, &setup.sketch0, &plan, &cfg.iteration, trace)?;
    if answer.fallback {
        part.fallback = Some(Fallback::FlatSlope);
    }
    part.answer = answer;
    part.estimator = Some(est);
    Ok(part)
}

/// Draws `⌈rate·|B_j|⌉` samples from one block and estimates its average.
pub fn aggregate_block(
    manifest: &BlockManifest,
    block: usize,
    rate: f64,
    setup: &BlockSetup,
    shift: f64,
    cfg: &QueryConfig,
) -> Result<PartialAnswer> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(invalid(format!("sampling rate must lie in (0, 1], got {rate}")));
    }
    let desc = &manifest.blocks[block];
    let n = draws_for(rate, desc.count);
    let seed = derive_seed(cfg.seed, domain::MAIN, block as u64, 0);
    let samples = draw_block(desc, block, n, seed, setup, shift)?;
    finish_block(block, samples, setup, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: usize,
    pub avg: f64,
    pub case: u8,
    pub iterations: u32,
    pub u: u64,
    pub v: u64,
    pub dev: Option<f64>,
    pub q: Option<f64>,
    pub k: Option<f64>,
    pub c: Option<f64>,
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<Fallback>,
    pub rate: f64,
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTrace {
    pub block: usize,
    pub steps: Vec<TraceStep<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub aggregate: Aggregate,
    /// The requested aggregate: the average, or the average times `M`.
    pub answer: f64,
    pub avg: f64,
    pub sum: f64,
    pub interval: [f64; 2],
    pub precision: f64,
    pub confidence: f64,
    pub mode: Mode,
    pub seed: u64,
    pub total_rows: u64,
    pub shift: f64,
    pub sketch0: f64,
    pub sigma_hat: f64,
    pub pilot_size: u64,
    pub rate: f64,
    pub samples: u64,
    pub full_scan_warning: bool,
    pub blocks: Vec<BlockReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<BlockTrace>,
}

impl AggregateReport {
    /// Per-iteration trace as CSV: `block,iteration,alpha,sketch,d`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["block", "iteration", "alpha", "sketch", "d"])?;
        for t in &self.trace {
            for s in &t.steps {
                w.write_record([
                    t.block.to_string(),
                    s.iteration.to_string(),
                    s.alpha.to_string(),
                    (s.sketch - self.shift).to_string(),
                    s.d.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub n: u64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl From<&RegionAccumulator<f64>> for MomentState {
    fn from(a: &RegionAccumulator<f64>) -> Self {
        Self {
            n: a.count(),
            s1: a.sum(),
            s2: a.sum2(),
            s3: a.sum3(),
        }
    }
}

impl From<MomentState> for RegionAccumulator<f64> {
    fn from(m: MomentState) -> Self {
        RegionAccumulator::from_parts(m.n, m.s1, m.s2, m.s3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    /// Unshifted.
    pub sketch0: f64,
    pub sigma: f64,
    pub pilot_size: u64,
    /// Shifted domain.
    pub boundaries: Option<DataBoundaries<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub id: usize,
    pub acc_s: MomentState,
    pub acc_l: MomentState,
    pub all: MomentState,
    /// Draw rounds performed so far; the next round seeds from this counter.
    pub seed_counter: u64,
    /// Present in non-iid mode, where each block has its own pilot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<BlockSetup>,
}

/// Everything needed to refine a finished query without redrawing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub version: u32,
    pub config_hash: String,
    pub e: f64,
    pub d: f64,
    pub global: GlobalState,
    pub blocks: Vec<BlockState>,
}

pub fn save_state(state: &ResumeState, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(state)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_state(path: impl AsRef<Path>) -> Result<ResumeState> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let state: ResumeState = serde_json::from_str(&text)?;
    if state.version != STATE_VERSION {
        return Err(Error::Resume(format!("unsupported state version {}", state.version)));
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub report: AggregateReport,
    pub state: ResumeState,
}

struct Plan {
    global: GlobalState,
    setups: Vec<BlockSetup>,
    rate: f64,
    rates: Vec<f64>,
    full_scan: bool,
}

/// Per-block rates at precision `e` given the pilot deviations.
fn plan_rates(
    manifest: &BlockManifest,
    cfg: &QueryConfig,
    e: f64,
    sigma: f64,
    setups: &[BlockSetup],
) -> Result<(f64, Vec<f64>, bool)> {
    let m = required_sample_size(e, cfg.precision.beta, sigma)?;
    let base = sampling_rate(m, manifest.total)?;
    let full_scan = m >= manifest.total;
    let r = base * cfg.rate_factor;
    let rates = match cfg.mode {
        Mode::Iid => vec![r; manifest.block_count()],
        Mode::NonIid => {
            let sigmas: Vec<f64> = setups.iter().map(|s| s.sigma).collect();
            block_sampling_rates(&sigmas, r, manifest.total, &manifest.sizes())?
        }
    };
    Ok((r, rates, full_scan))
}

fn plan_query(manifest: &BlockManifest, cfg: &QueryConfig, pilot: &PilotStats) -> Result<(Plan, f64)> {
    let d = shift_for_negatives(pilot.min_seen);
    let global_setup = BlockSetup::new(pilot.sketch0 + d, pilot.sigma_hat, cfg)?;
    let setups = match &pilot.per_block {
        Some(per) => per
            .iter()
            .map(|p| BlockSetup::new(p.sketch0 + d, p.sigma_hat, cfg))
            .collect::<Result<Vec<_>>>()?,
        None => vec![global_setup.clone(); manifest.block_count()],
    };
    let (rate, rates, full_scan) = plan_rates(manifest, cfg, cfg.precision.e, pilot.sigma_hat, &setups)?;
    let global = GlobalState {
        sketch0: pilot.sketch0,
        sigma: pilot.sigma_hat,
        pilot_size: pilot.pilot_size,
        boundaries: global_setup.boundaries,
    };
    Ok((
        Plan {
            global,
            setups,
            rate,
            rates,
            full_scan,
        },
        d,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    manifest: &BlockManifest,
    aggregate: Aggregate,
    cfg: &QueryConfig,
    plan: &Plan,
    d: f64,
    parts: &[PartialAnswer],
    config_hash: String,
    seed_counter: u64,
) -> Result<QueryOutcome> {
    let avgs: Vec<f64> = parts.iter().map(|p| p.answer.avg).collect();
    let avg = summarize(&avgs, &manifest.sizes(), manifest.total)? - d;
    let total = manifest.total as f64;
    let sum = avg * total;
    let e = cfg.precision.e;
    let (answer, half) = match aggregate {
        Aggregate::Avg => (avg, e),
        Aggregate::Sum => (sum, e * total),
    };
    let blocks = parts
        .iter()
        .zip(&plan.rates)
        .map(|(p, &rate)| BlockReport {
            block: p.block,
            avg: p.answer.avg - d,
            case: p.answer.case.number(),
            iterations: p.answer.iterations,
            u: p.samples.acc_s.count(),
            v: p.samples.acc_l.count(),
            dev: p.dev,
            q: p.q,
            k: p.estimator.as_ref().map(|e| e.k),
            c: p.estimator.as_ref().map(|e| e.c - d),
            fallback: p.fallback.is_some(),
            fallback_reason: p.fallback,
            rate,
            samples: p.samples_drawn(),
        })
        .collect();
    let trace = if cfg.emit_trace {
        parts
            .iter()
            .map(|p| BlockTrace {
                block: p.block,
                steps: p.trace.clone(),
            })
            .collect()
    } else {
        Vec::new()
    };
    let report = AggregateReport {
        aggregate,
        answer,
        avg,
        sum,
        interval: [answer - half, answer + half],
        precision: e,
        confidence: cfg.precision.beta,
        mode: cfg.mode,
        seed: cfg.seed,
        total_rows: manifest.total,
        shift: d,
        sketch0: plan.global.sketch0,
        sigma_hat: plan.global.sigma,
        pilot_size: plan.global.pilot_size,
        rate: plan.rate,
        samples: parts.iter().map(|p| p.samples_drawn()).sum(),
        full_scan_warning: plan.full_scan,
        blocks,
        trace,
    };
    let state = ResumeState {
        version: STATE_VERSION,
        config_hash,
        e,
        d,
        global: plan.global.clone(),
        blocks: parts
            .iter()
            .zip(&plan.setups)
            .map(|(p, s)| BlockState {
                id: p.block,
                acc_s: (&p.samples.acc_s).into(),
                acc_l: (&p.samples.acc_l).into(),
                all: (&p.samples.all).into(),
                seed_counter,
                setup: (cfg.mode == Mode::NonIid).then(|| s.clone()),
            })
            .collect(),
    };
    Ok(QueryOutcome { report, state })
}

/// Runs a complete query against a validated manifest.
pub fn run_query(manifest: &BlockManifest, aggregate: Aggregate, cfg: &QueryConfig) -> Result<QueryOutcome> {
    cfg.validate()?;
    let config_hash = cfg.fingerprint(manifest)?;
    let pilot = estimate_pilot(manifest, &cfg.precision, cfg.seed, cfg.mode == Mode::NonIid)?;
    let (plan, d) = plan_query(manifest, cfg, &pilot)?;
    if plan.full_scan {
        log::warn!("precision {} needs at least as many samples as rows", cfg.precision.e);
    }
    let parts = (0..manifest.block_count())
        .into_par_iter()
        .map(|j| aggregate_block(manifest, j, plan.rates[j], &plan.setups[j], d, cfg))
        .collect::<Result<Vec<_>>>()?;
    assemble(manifest, aggregate, cfg, &plan, d, &parts, config_hash, 1)
}

/// Continues a saved query at the finer precision `cfg.precision.e`.
///
/// Boundaries and sketches stay frozen; each block draws only the samples
/// missing from the new budget, from a fresh seed round.
pub fn resume(
    state: &ResumeState,
    manifest: &BlockManifest,
    aggregate: Aggregate,
    cfg: &QueryConfig,
) -> Result<QueryOutcome> {
    if !(cfg.precision.e < state.e) {
        return Err(Error::Resume(format!(
            "new precision {} must be finer than the saved {}",
            cfg.precision.e, state.e
        )));
    }
    continue_state(state, manifest, aggregate, cfg, true)
}

/// Rebuilds the answer from a saved state without drawing anything.
pub fn recompute(
    state: &ResumeState,
    manifest: &BlockManifest,
    aggregate: Aggregate,
    cfg: &QueryConfig,
) -> Result<QueryOutcome> {
    let mut cfg = cfg.clone();
    cfg.precision.e = state.e;
    continue_state(state, manifest, aggregate, &cfg, false)
}

fn continue_state(
    state: &ResumeState,
    manifest: &BlockManifest,
    aggregate: Aggregate,
    cfg: &QueryConfig,
    draw: bool,
) -> Result<QueryOutcome> {
    cfg.validate()?;
    if state.version != STATE_VERSION {
        return Err(Error::Resume(format!("unsupported state version {}", state.version)));
    }
    let config_hash = cfg.fingerprint(manifest)?;
    if config_hash != state.config_hash {
        return Err(Error::Resume(
            "configuration or dataset differs from the saved run".into(),
        ));
    }
    if state.blocks.len() != manifest.block_count() {
        return Err(Error::Resume(format!(
            "state has {} blocks, dataset has {}",
            state.blocks.len(),
            manifest.block_count()
        )));
    }
    let d = state.d;
    let g = &state.global;
    let global_setup = BlockSetup {
        sketch0: g.sketch0 + d,
        sigma: g.sigma,
        boundaries: g.boundaries.clone(),
    };
    let setups = state
        .blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            if b.id != j {
                return Err(Error::Resume(format!("block {} stored at position {j}", b.id)));
            }
            match (cfg.mode, &b.setup) {
                (Mode::Iid, None) => Ok(global_setup.clone()),
                (Mode::NonIid, Some(s)) => Ok(s.clone()),
                _ => Err(Error::Resume(format!("block {j} setup does not match the mode"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (rate, rates, full_scan) = plan_rates(manifest, cfg, cfg.precision.e, g.sigma, &setups)?;
    let plan = Plan {
        global: g.clone(),
        setups,
        rate,
        rates,
        full_scan,
    };
    let counter = state.blocks[0].seed_counter;
    let parts = state
        .blocks
        .par_iter()
        .enumerate()
        .map(|(j, b)| {
            let mut samples = BlockSamples {
                acc_s: b.acc_s.into(),
                acc_l: b.acc_l.into(),
                all: b.all.into(),
            };
            if draw {
                let target = draws_for(plan.rates[j], manifest.blocks[j].count);
                let delta = target.saturating_sub(samples.drawn());
                let seed = derive_seed(cfg.seed, domain::MAIN, j as u64, b.seed_counter);
                let extra = draw_block(&manifest.blocks[j], j, delta, seed, &plan.setups[j], d)?;
                samples.merge(&extra);
            }
            finish_block(j, samples, &plan.setups[j], cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let next = if draw { counter + 1 } else { counter };
    assemble(manifest, aggregate, cfg, &plan, d, &parts, config_hash, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn summarize_examples() {
        assert_eq!(summarize(&[99.0, 101.0], &[5, 5], 10).unwrap(), 100.0);
        assert_eq!(summarize(&[100.0, 200.0], &[100_000, 300_000], 400_000).unwrap(), 175.0);
        assert_eq!(summarize(&[42.5], &[7], 7).unwrap(), 42.5);
        assert!(summarize(&[1.0], &[1, 2], 3).is_err());
        assert!(summarize(&[1.0, 2.0], &[1, 2], 4).is_err());
    }

    #[test]
    fn summarize_is_exact_for_rationals() {
        let avgs = [Ratio::new(1, 3), Ratio::new(5, 7), Ratio::new(-2, 9)];
        let got = summarize(&avgs, &[3, 7, 9], 19).unwrap();
        assert_eq!(got, Ratio::new(1 + 5 - 2, 19));
    }

    #[test]
    fn rates_examples() {
        let r = block_sampling_rates(&[5.0; 4], 0.02, 400, &[100; 4]).unwrap();
        assert!(r.iter().all(|&x| (x - 0.02).abs() < 1e-15));

        let r = block_sampling_rates(&[10.0, 30.0], 0.1, 1000, &[500, 500]).unwrap();
        assert!((r[0] - 0.2 * 101.0 / 1002.0).abs() < 1e-15);
        assert!((r[1] - 0.2 * 901.0 / 1002.0).abs() < 1e-15);
        assert!((r[0] * 500.0 + r[1] * 500.0 - 100.0).abs() < 1e-9);

        let r = block_sampling_rates(&[0.0, 3.0], 0.1, 200, &[100, 100]).unwrap();
        assert!(r[0] > 0.0);
        assert!(block_sampling_rates(&[1.0], 0.1, 100, &[50, 50]).is_err());
    }

    #[test]
    fn shift_rule() {
        assert_eq!(shift_for_negatives(-4.0), 5.0);
        assert_eq!(shift_for_negatives(0.0), 1.0);
        assert_eq!(shift_for_negatives(3.0), 0.0);
    }

    #[test]
    fn config_validation() {
        let ok = QueryConfig::new(0.1, 0.95, 1);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.p1 = 2.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.rate_factor = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.q_override = Some(-1.0);
        assert!(c.validate().is_err());
        let mut c = ok;
        c.iteration.lambda = 1.0;
        assert!(c.validate().is_err());
    }

    fn setup(sketch0: f64, sigma: f64) -> BlockSetup {
        BlockSetup::new(sketch0, sigma, &QueryConfig::new(0.1, 0.95, 0)).unwrap()
    }

    #[test]
    fn finish_falls_back_without_spread() {
        let cfg = QueryConfig::new(0.1, 0.95, 0);
        let s = setup(7.0, 0.0);
        let mut samples = BlockSamples::default();
        (0..5).for_each(|_| samples.all.push(7.0));
        let p = finish_block(0, samples, &s, &cfg).unwrap();
        assert_eq!(p.answer.avg, 7.0);
        assert_eq!(p.fallback, Some(Fallback::ZeroSpread));
    }

    #[test]
    fn finish_falls_back_on_empty_region() {
        let cfg = QueryConfig::new(0.1, 0.95, 0);
        let s = setup(100.0, 20.0);
        let mut samples = BlockSamples::default();
        for a in [85.0, 88.0, 101.0, 150.0] {
            samples.all.push(a);
            if a < 90.0 {
                samples.acc_s.push(a);
            }
        }
        let p = finish_block(0, samples, &s, &cfg).unwrap();
        assert!((p.answer.avg - 106.0).abs() < 1e-12);
        assert_eq!(p.fallback, Some(Fallback::EmptyRegion));
        assert!(p.answer.fallback);
    }

    #[test]
    fn finish_runs_the_loop() {
        let cfg = QueryConfig::new(0.1, 0.95, 0);
        let s = setup(100.0, 20.0);
        let mut samples = BlockSamples::default();
        for a in [80.0, 85.0, 89.0, 112.0, 120.0, 125.0, 130.0] {
            samples.all.push(a);
            match s.boundaries.as_ref().unwrap().classify(&a) {
                Region::Small => samples.acc_s.push(a),
                Region::Large => samples.acc_l.push(a),
                _ => {}
            }
        }
        let p = finish_block(3, samples, &s, &cfg).unwrap();
        assert_eq!(p.block, 3);
        assert_eq!(p.dev, Some(0.75));
        assert_eq!(p.q, Some(10.0));
        assert!(p.fallback.is_none());
        let est = p.estimator.unwrap();
        assert!((p.answer.avg - est.evaluate(&p.answer.alpha_final)).abs() < 1e-12);
        assert!((p.answer.avg - p.answer.sketch_final).abs() <= cfg.iteration.thr);
    }
}
