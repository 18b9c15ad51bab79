//! Iterative modulation of the leverage estimate against the sketch.
//!
//! Starting from `α = 0` the gap `D = μ̂(α) - sketch` is closed by moving both
//! estimators at once. Each step removes the fraction `1 - η` of the gap, so
//! the loop ends after `⌈log_{1/η}(|D⁰| / thr)⌉` steps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::leverage::LinearEstimator;
use crate::scalar::Scalar;

/// Which way an estimator moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    fn apply<T: Scalar>(self, magnitude: T) -> T {
        match self {
            Direction::Up => magnitude,
            Direction::Down => -magnitude,
        }
    }
}

/// Which of `|k·Δα|` and `|Δsketch|` is the larger step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dominant {
    AlphaTerm,
    SketchTerm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulationCase {
    /// `D⁰ < 0`, fewer small than large samples.
    RaiseBoth,
    /// `D⁰ < 0`, more small than large samples.
    RaiseEstimate,
    /// `D⁰ > 0`, fewer small than large samples.
    LowerEstimate,
    /// `D⁰ > 0`, more small than large samples.
    LowerBoth,
    /// Regions balanced or the estimators already agree.
    Balanced,
}

impl ModulationCase {
    pub fn number(self) -> u8 {
        match self {
            ModulationCase::RaiseBoth => 1,
            ModulationCase::RaiseEstimate => 2,
            ModulationCase::LowerEstimate => 3,
            ModulationCase::LowerBoth => 4,
            ModulationCase::Balanced => 5,
        }
    }
}

impl fmt::Display for ModulationCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulationPlan {
    pub case: ModulationCase,
    /// Direction of `k·Δα`, the change of the leverage estimate.
    pub alpha_direction: Option<Direction>,
    pub sketch_direction: Option<Direction>,
    pub dominant: Option<Dominant>,
}

impl ModulationPlan {
    fn moving(case: ModulationCase, alpha: Direction, sketch: Direction, dominant: Dominant) -> Self {
        Self {
            case,
            alpha_direction: Some(alpha),
            sketch_direction: Some(sketch),
            dominant: Some(dominant),
        }
    }

    pub fn balanced() -> Self {
        Self {
            case: ModulationCase::Balanced,
            alpha_direction: None,
            sketch_direction: None,
            dominant: None,
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.case == ModulationCase::Balanced
    }

    pub fn same_direction(&self) -> bool {
        self.alpha_direction.is_some() && self.alpha_direction == self.sketch_direction
    }
}

/// Open interval of `u / v` treated as balanced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceBand {
    pub lo: f64,
    pub hi: f64,
}

impl Default for BalanceBand {
    fn default() -> Self {
        Self { lo: 0.99, hi: 1.01 }
    }
}

impl BalanceBand {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo >= 0.0 && self.lo < 1.0 && self.hi > 1.0 && self.hi.is_finite()) {
            return Err(invalid(format!(
                "balance band must contain 1, got ({}, {})",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: u64, v: u64) -> bool {
        if v == 0 {
            return false;
        }
        let dev = u as f64 / v as f64;
        dev > self.lo && dev < self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig<T> {
    pub eta: T,
    pub lambda: T,
    pub thr: T,
}

impl<T: Scalar> Default for IterationConfig<T> {
    fn default() -> Self {
        Self {
            eta: T::one() / T::from_count(2),
            lambda: T::from_count(4) / T::from_count(5),
            thr: T::one() / T::from_count(1000),
        }
    }
}

impl<T: Scalar> IterationConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: &T| *x > T::zero() && *x < T::one();
        if !unit(&self.eta) {
            return Err(invalid(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !unit(&self.lambda) {
            return Err(invalid(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if !(self.thr > T::zero()) {
            return Err(invalid(format!("thr must be positive, got {}", self.thr)));
        }
        Ok(())
    }
}

/// `D⁰ = c - sketch0`.
pub fn initial_d<T: Scalar>(est: &LinearEstimator<T>, sketch0: &T) -> T {
    est.c.clone() - sketch0.clone()
}

pub fn select_case<T: Scalar>(d0: &T, u: u64, v: u64, band: &BalanceBand) -> ModulationPlan {
    use Direction::{Down, Up};
    use Dominant::{AlphaTerm, SketchTerm};

    if band.contains(u, v) || d0.is_zero() || u == v {
        return ModulationPlan::balanced();
    }
    match (d0.is_negative(), u < v) {
        (true, true) => ModulationPlan::moving(ModulationCase::RaiseBoth, Up, Up, AlphaTerm),
        (true, false) => ModulationPlan::moving(ModulationCase::RaiseEstimate, Up, Down, SketchTerm),
        // Mirror of the case above: the estimate overshoots, so it comes down
        // while the sketch climbs and does most of the closing.
        (false, true) => ModulationPlan::moving(ModulationCase::LowerEstimate, Down, Up, SketchTerm),
        (false, false) => ModulationPlan::moving(ModulationCase::LowerBoth, Down, Down, AlphaTerm),
    }
}

/// Signed `(Δα, Δsketch)` for one step at gap `d`.
///
/// The pair satisfies `k·Δα - Δsketch = (η - 1)·d` and the smaller of
/// `|k·Δα|`, `|Δsketch|` is exactly `λ` times the larger.
pub fn step_lengths<T: Scalar>(plan: &ModulationPlan, d: &T, k: &T, cfg: &IterationConfig<T>) -> Result<(T, T)> {
    let (Some(alpha_dir), Some(sketch_dir), Some(dominant)) =
        (plan.alpha_direction, plan.sketch_direction, plan.dominant)
    else {
        return Err(invalid("a balanced plan has no step lengths"));
    };
    if k.is_zero() {
        return Err(invalid("step lengths need a non-zero slope k"));
    }
    let g = (T::one() - cfg.eta.clone()) * d.abs();
    let denom = if plan.same_direction() {
        T::one() - cfg.lambda.clone()
    } else {
        T::one() + cfg.lambda.clone()
    };
    let major = g / denom;
    let minor = cfg.lambda.clone() * major.clone();
    let (estimate_mag, sketch_mag) = match dominant {
        Dominant::AlphaTerm => (major, minor),
        Dominant::SketchTerm => (minor, major),
    };
    let k_delta_alpha = alpha_dir.apply(estimate_mag);
    Ok((k_delta_alpha / k.clone(), sketch_dir.apply(sketch_mag)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep<T> {
    pub iteration: u32,
    pub alpha: T,
    pub sketch: T,
    pub d: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockAnswer<T> {
    pub avg: T,
    pub alpha_final: T,
    pub sketch_final: T,
    pub iterations: u32,
    pub case: ModulationCase,
    pub fallback: bool,
}

/// Runs the modulation loop for one block.
///
/// A balanced plan returns `sketch0`. A slope too flat to move the estimate
/// returns `c` with `fallback` set. Steps are appended to `trace` if given.
pub fn iterate<T: Scalar>(
    est: &LinearEstimator<T>,
    sketch0: &T,
    plan: &ModulationPlan,
    cfg: &IterationConfig<T>,
    mut trace: Option<&mut Vec<TraceStep<T>>>,
) -> Result<BlockAnswer<T>> {
    cfg.validate()?;
    let mut answer = BlockAnswer {
        avg: est.c.clone(),
        alpha_final: T::zero(),
        sketch_final: sketch0.clone(),
        iterations: 0,
        case: plan.case,
        fallback: false,
    };
    if plan.is_balanced() {
        answer.avg = sketch0.clone();
        return Ok(answer);
    }
    let flat = T::from_f64_lossy(1e-12) * T::max_of(T::one(), est.c.abs());
    if est.k.abs() < flat {
        answer.fallback = true;
        return Ok(answer);
    }

    let mut d = initial_d(est, sketch0);
    let mut alpha = T::zero();
    let mut sketch = sketch0.clone();
    let mut iterations = 0u32;
    while d.abs() > cfg.thr {
        let (da, ds) = step_lengths(plan, &d, &est.k, cfg)?;
        alpha = alpha + da;
        sketch = sketch + ds;
        d = cfg.eta.clone() * d;
        iterations += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceStep {
                iteration: iterations,
                alpha: alpha.clone(),
                sketch: sketch.clone(),
                d: d.clone(),
            });
        }
    }
    answer.avg = est.evaluate(&alpha);
    answer.alpha_final = alpha;
    answer.sketch_final = sketch;
    answer.iterations = iterations;
    Ok(answer)
}
