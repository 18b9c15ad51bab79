//! Sample sizing and the pilot that seeds the sketch estimator.
//!
//! The pilot runs in two stages. Stage A draws [`PILOT_STAGE_A`] rows spread
//! over the blocks in proportion to their sizes and yields the standard
//! deviation estimate. Stage B tops the pilot up to the size needed for the
//! relaxed precision `t_e * e`; the mean of every pilot row is the initial
//! sketch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::blockstore::{derive_seed, domain, draw_uniform, BlockManifest};
use crate::error::{invalid, Result};

/// Rows drawn by the first pilot stage.
pub const PILOT_STAGE_A: u64 = 1000;

/// Smallest stage-A share a block gets when per-block statistics are needed.
const MIN_BLOCK_SHARE: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSpec {
    /// Half-width of the requested interval, in value units.
    pub e: f64,
    /// Confidence level.
    pub beta: f64,
    /// Relaxed-precision multiplier for the pilot.
    pub t_e: f64,
}

impl PrecisionSpec {
    pub const DEFAULT_T_E: f64 = 5.0;

    pub fn new(e: f64, beta: f64) -> Self {
        Self {
            e,
            beta,
            t_e: Self::DEFAULT_T_E,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0 && self.e.is_finite()) {
            return Err(invalid(format!("precision must be positive, got {}", self.e)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid(format!("confidence must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.t_e > 1.0 && self.t_e.is_finite()) {
            return Err(invalid(format!("t_e must exceed 1, got {}", self.t_e)));
        }
        Ok(())
    }
}

/// Two-sided standard-normal quantile: `P(-z < Z < z) = beta`.
pub fn normal_quantile(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("confidence must lie in (0, 1), got {beta}")));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(0.5 + 0.5 * beta))
}

/// `ceil(z^2 sigma^2 / e^2)`, at least 1.
pub fn required_sample_size(e: f64, beta: f64, sigma: f64) -> Result<u64> {
    if !(e > 0.0) {
        return Err(invalid(format!("precision must be positive, got {e}")));
    }
    if !(sigma >= 0.0) {
        return Err(invalid(format!("standard deviation must be non-negative, got {sigma}")));
    }
    let z = normal_quantile(beta)?;
    let m = (z * sigma / e).powi(2).ceil();
    Ok(if m >= 1.0 { m as u64 } else { 1 })
}

/// `min(m / M, 1)`. A clamp means the precision demand exceeds a full scan.
pub fn sampling_rate(m: u64, total: u64) -> Result<f64> {
    if total == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    let r = m as f64 / total as f64;
    if r > 1.0 {
        log::warn!("required sample size {m} exceeds the {total} rows; clamping the rate at 1");
        return Ok(1.0);
    }
    Ok(r)
}

/// Splits `total` over `sizes` proportionally (largest remainder, ties to the lower index).
pub fn allocate_proportional(total: u64, sizes: &[u64]) -> Vec<u64> {
    let sum: u128 = sizes.iter().map(|&s| s as u128).sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut rems = Vec::with_capacity(sizes.len());
    let mut given = 0u64;
    for (j, &s) in sizes.iter().enumerate() {
        let num = total as u128 * s as u128;
        let q = (num / sum) as u64;
        out.push(q);
        rems.push((num % sum, j));
        given += q;
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, j) in rems.iter().take((total - given) as usize) {
        out[j] += 1;
    }
    out
}

/// Running count, mean and centred second moment (Welford, Chan merge).
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    min: f64,
}

impl Moments {
    pub(crate) fn push(&mut self, x: f64) {
        if self.n == 0 || x < self.min {
            self.min = x;
        }
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        self.m2 += o.m2 + delta * delta * (self.n as f64 * o.n as f64) / n as f64;
        self.mean += delta * o.n as f64 / n as f64;
        self.min = self.min.min(o.min);
        self.n = n;
    }

    /// Bessel-corrected standard deviation; zero below two observations.
    pub(crate) fn std_dev(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2.max(0.0) / (self.n - 1) as f64).sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPilot {
    pub sigma_hat: f64,
    pub sketch0: f64,
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotStats {
    pub sigma_hat: f64,
    pub sketch0: f64,
    pub pilot_size: u64,
    pub min_seen: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_block: Option<Vec<BlockPilot>>,
}

fn draw_moments(manifest: &BlockManifest, counts: &[u64], seed: u64, dom: u64) -> Result<Vec<Moments>> {
    manifest
        .blocks
        .par_iter()
        .zip(counts.par_iter())
        .enumerate()
        .map(|(j, (block, &n))| {
            let mut mo = Moments::default();
            for x in draw_uniform(block, j as u64, n, derive_seed(seed, dom, j as u64, 0))? {
                mo.push(x?);
            }
            Ok(mo)
        })
        .collect()
}

/// Runs the two-stage pilot.
///
/// With `per_block` each block is additionally topped up to its own relaxed
/// precision requirement so that its `(sigma_j, sketch0_j)` pair carries the
/// same `t_e * e` guarantee as the global sketch.
pub fn estimate_pilot(
    manifest: &BlockManifest,
    spec: &PrecisionSpec,
    seed: u64,
    per_block: bool,
) -> Result<PilotStats> {
    spec.validate()?;
    let sizes = manifest.sizes();
    let mut share_a = allocate_proportional(PILOT_STAGE_A, &sizes);
    if per_block {
        share_a.iter_mut().for_each(|n| *n = (*n).max(MIN_BLOCK_SHARE));
    }
    let stage_a = draw_moments(manifest, &share_a, seed, domain::PILOT_A)?;
    let mut pooled = Moments::default();
    stage_a.iter().for_each(|m| pooled.merge(m));
    let sigma_a = pooled.std_dev();

    let relaxed = spec.t_e * spec.e;
    let target = required_sample_size(relaxed, spec.beta, sigma_a)?.max(PILOT_STAGE_A);
    let drawn_a: u64 = share_a.iter().sum();
    let mut share_b = allocate_proportional(target.saturating_sub(drawn_a), &sizes);
    if per_block {
        for (j, m) in stage_a.iter().enumerate() {
            let own = required_sample_size(relaxed, spec.beta, m.std_dev())?;
            share_b[j] = share_b[j].max(own.saturating_sub(share_a[j]));
        }
    }
    let stage_b = draw_moments(manifest, &share_b, seed, domain::PILOT_B)?;

    let mut all = Moments::default();
    let mut blocks = Vec::with_capacity(sizes.len());
    for (a, b) in stage_a.iter().zip(&stage_b) {
        let mut m = *a;
        m.merge(b);
        blocks.push(m);
        all.merge(&m);
    }

    let per_block_stats = per_block.then(|| {
        blocks
            .iter()
            .map(|m| BlockPilot {
                sigma_hat: m.std_dev(),
                sketch0: m.mean,
                samples: m.n,
            })
            .collect::<Vec<_>>()
    });
    // Per-block shares are no longer proportional, so reweight by block size.
    let sketch0 = match &per_block_stats {
        Some(bp) => {
            let total = manifest.total as f64;
            bp.iter().zip(&sizes).map(|(p, &s)| p.sketch0 * s as f64 / total).sum()
        }
        None => all.mean,
    };

    Ok(PilotStats {
        sigma_hat: sigma_a,
        sketch0,
        pilot_size: all.n,
        min_seen: all.min.min(sketch0),
        per_block: per_block_stats,
    })
}
