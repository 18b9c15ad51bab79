//! Approximate AVG and SUM over block-partitioned numeric data.
//!
//! A small pilot fixes a coarse sketch of the average and four cut points
//! around it. Each block is then sampled uniformly; only the moments of the
//! values falling just below and just above the sketch are kept. From those
//! moments a leverage-weighted estimate `k·α + c` is formed and moved together
//! with the sketch until the two agree, and the per-block answers are combined
//! by block size.
//!
//! The estimator math is generic over [`Scalar`], so it runs on `f64` and on
//! exact rationals alike. Dataset access, orchestration and the benchmark
//! harness work on `f64`.

// `!(x > 0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod baselines;
pub mod bench;
pub mod blockstore;
pub mod error;
pub mod iteration;
pub mod leverage;
pub mod preestimation;
pub mod query;
pub mod scalar;

pub use aggregate::{
    block_sampling_rates, load_state, recompute, resume, run_query, save_state, shift_for_negatives, summarize,
    AggregateReport, Mode, PartialAnswer, QueryConfig, QueryOutcome, ResumeState,
};
pub use baselines::{mv_estimate, mvb_estimate, run_baseline, stratified_estimate, uniform_estimate, Method};
pub use blockstore::{draw_uniform, generate_dataset, BlockManifest, DistributionSpec};
pub use error::{Error, Result};
pub use iteration::{iterate, select_case, step_lengths, BalanceBand, ModulationCase, ModulationPlan};
pub use leverage::{leverage_probabilities, linear_estimator, select_q, DataBoundaries, Region, RegionAccumulator};
pub use preestimation::{estimate_pilot, normal_quantile, required_sample_size, sampling_rate, PrecisionSpec};
pub use query::{parse_query, Aggregate, Query};
pub use scalar::Scalar;

/// Exact rational with machine-word parts; enough for small worked examples.
pub type Rational = num_rational::Ratio<i64>;
/// Arbitrary-precision rational for long exact computations.
pub type BigRational = num_rational::BigRational;

pub type Boundaries = leverage::DataBoundaries<f64>;
pub type Accumulator = leverage::RegionAccumulator<f64>;
pub type Estimator = leverage::LinearEstimator<f64>;
pub type IterationConfig = iteration::IterationConfig<f64>;
pub type BlockAnswer = iteration::BlockAnswer<f64>;
pub type LeverageTable = leverage::LeverageTable<f64>;

pub type ExactAccumulator = leverage::RegionAccumulator<Rational>;
pub type ExactEstimator = leverage::LinearEstimator<Rational>;
pub type ExactLeverageTable = leverage::LeverageTable<Rational>;
