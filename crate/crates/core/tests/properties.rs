use levagg_core::aggregate::{block_sampling_rates, summarize};
use levagg_core::baselines::{mv_estimate, mvb_estimate, stratified_estimate, uniform_estimate, MvbFold};
use levagg_core::iteration::{
    initial_d, iterate, select_case, step_lengths, BalanceBand, Direction, Dominant, IterationConfig, ModulationCase,
};
use levagg_core::leverage::{
    leverage_probabilities, linear_estimator, DataBoundaries, LinearEstimator, Region, RegionAccumulator,
};
use levagg_core::preestimation::{normal_quantile, required_sample_size};
use levagg_core::Rational;
use proptest::prelude::*;

/// Per-sample leverage estimate, built step by step.
///
/// The region weights are scaled so that the small and large leverage masses
/// stand in the ratio `q·u : v` and add up to one; no closed-form factor is
/// used. Returns `(k, c)` read off as `μ̂(1) - μ̂(0)` and `μ̂(0)`.
fn five_step(xs: &[f64], ys: &[f64], q: f64) -> (f64, f64) {
    let total2: f64 = xs.iter().chain(ys).map(|a| a * a).sum();
    let h = |a: f64| a * a / total2;
    let raw_x: Vec<f64> = xs.iter().map(|&a| 1.0 - h(a)).collect();
    let raw_y: Vec<f64> = ys.iter().map(|&a| h(a)).collect();
    let (u, v) = (xs.len() as f64, ys.len() as f64);
    let mass_x = q * u / (q * u + v);
    let mass_y = v / (q * u + v);
    let sx: f64 = raw_x.iter().sum();
    let sy: f64 = raw_y.iter().sum();
    let lev_x = raw_x.iter().map(|r| r * mass_x / sx);
    let lev_y = raw_y.iter().map(|r| r * mass_y / sy);
    let levs: Vec<f64> = lev_x.chain(lev_y).collect();
    let values: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let mu = |alpha: f64| {
        let unif = (1.0 - alpha) / (u + v);
        values
            .iter()
            .zip(&levs)
            .map(|(a, l)| (alpha * l + unif) * a)
            .sum::<f64>()
    };
    let c = mu(0.0);
    (mu(1.0) - c, c)
}

/// Standard normal CDF by composite Simpson integration of the density.
fn phi_cdf(z: f64) -> f64 {
    let n = 20_000;
    let h = z / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(z);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

fn quantile_oracle(beta: f64) -> f64 {
    let target = 0.5 + 0.5 * beta;
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn region_sets() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (
        prop::collection::vec(1.0f64..100.0, 1..20),
        prop::collection::vec(1.0f64..100.0, 1..20),
        prop::sample::select(vec![0.1f64, 0.2, 1.0, 5.0, 10.0]),
    )
}

#[test]
fn quantile_matches_integrated_density() {
    for beta in [0.5, 0.8, 0.9, 0.95, 0.975, 0.99, 0.999] {
        let got = normal_quantile(beta).unwrap();
        let want = quantile_oracle(beta);
        assert!((got - want).abs() < 1e-9, "beta {beta}: {got} vs {want}");
    }
    // Frozen from the oracle: z(0.95) = 1.959963984540054.
    assert!((normal_quantile(0.95).unwrap() - 1.959963984540054).abs() < 1e-12);
    assert!((normal_quantile(0.80).unwrap() - 1.281552).abs() < 1e-6);
    assert!((normal_quantile(0.6827).unwrap() - 1.0).abs() < 1e-4);
    let z = quantile_oracle(0.95);
    let m = (z * z * 400.0 / 0.01).ceil() as u64;
    assert_eq!(m, 153_659);
    assert_eq!(required_sample_size(0.1, 0.95, 20.0).unwrap(), m);
}

#[test]
fn worked_example_exact() {
    let r = |n, d| Rational::new(n, d);
    let t = leverage_probabilities(&[r(4, 1), r(5, 1)], &[r(8, 1)], r(1, 1), r(1, 10)).unwrap();
    let norm: Vec<Rational> = t.rows.iter().map(|row| row.norm_lev).collect();
    assert_eq!(norm, vec![r(178, 507), r(160, 507), r(1, 3)]);
    assert_eq!(t.probability_sum(), r(1, 1));
    let mu = t.estimate();
    let est = linear_estimator(
        &RegionAccumulator::from_values(&[r(4, 1), r(5, 1)]),
        &RegionAccumulator::from_values(&[r(8, 1)]),
        r(1, 1),
    )
    .unwrap();
    assert_eq!(est.evaluate(&r(1, 10)), mu);
    let muf = *mu.numer() as f64 / *mu.denom() as f64;
    assert!((muf - 5.66489).abs() < 1e-5, "{muf}");
    // The same instance through the float oracle.
    let (k, c) = five_step(&[4.0, 5.0], &[8.0], 1.0);
    assert!((k * 0.1 + c - muf).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn closed_form_matches_five_steps((xs, ys, q) in region_sets()) {
        let est = linear_estimator(&RegionAccumulator::from_values(&xs), &RegionAccumulator::from_values(&ys), q).unwrap();
        let (k, c) = five_step(&xs, &ys, q);
        prop_assert!((est.k - k).abs() <= 1e-9, "k {} vs {}", est.k, k);
        prop_assert!((est.c - c).abs() <= 1e-9, "c {} vs {}", est.c, c);
    }
}

proptest! {
    #[test]
    fn probabilities_sum_to_one((xs, ys, q) in region_sets(), alpha in -0.99f64..0.99) {
        let t = leverage_probabilities(&xs, &ys, q, alpha).unwrap();
        prop_assert!((t.probability_sum() - 1.0).abs() <= 1e-9);
        let est = linear_estimator(&RegionAccumulator::from_values(&xs), &RegionAccumulator::from_values(&ys), q).unwrap();
        prop_assert!((t.estimate() - est.evaluate(&alpha)).abs() <= 1e-9);
    }

    #[test]
    fn region_masses_follow_q((xs, ys, q) in region_sets()) {
        let t = leverage_probabilities(&xs, &ys, q, 0.5).unwrap();
        let ratio = t.leverage_sum(Region::Small) / t.leverage_sum(Region::Large);
        let want = q * xs.len() as f64 / ys.len() as f64;
        prop_assert!((ratio / want - 1.0).abs() <= 1e-9);
        prop_assert!((t.leverage_sum(Region::Small) + t.leverage_sum(Region::Large) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn estimator_is_homogeneous((xs, ys, q) in region_sets(), s in 0.01f64..50.0) {
        let acc = |v: &[f64]| RegionAccumulator::from_values(v);
        let base = linear_estimator(&acc(&xs), &acc(&ys), q).unwrap();
        let sx: Vec<f64> = xs.iter().map(|a| a * s).collect();
        let sy: Vec<f64> = ys.iter().map(|a| a * s).collect();
        let scaled = linear_estimator(&acc(&sx), &acc(&sy), q).unwrap();
        let tol = 1e-9 * s.max(1.0) * 100.0;
        prop_assert!((scaled.k - s * base.k).abs() <= tol);
        prop_assert!((scaled.c - s * base.c).abs() <= tol);
    }

    #[test]
    fn gap_decays_geometrically(
        k in prop::sample::select(vec![-3.0f64, -0.4, 0.7, 2.5]),
        d0 in prop::sample::select(vec![-2.0f64, -0.6, 0.3, 1.7]),
        eta in prop::sample::select(vec![0.3f64, 0.5, 0.7]),
        u_less in any::<bool>(),
    ) {
        let c = 100.0;
        let est = LinearEstimator { k, c };
        let sketch0 = c - d0;
        let (u, v) = if u_less { (400, 500) } else { (500, 400) };
        let plan = select_case(&initial_d(&est, &sketch0), u, v, &BalanceBand::default());
        let cfg = IterationConfig { eta, lambda: 0.8, thr: 1e-4 };
        let mut trace = Vec::new();
        let ans = iterate(&est, &sketch0, &plan, &cfg, Some(&mut trace)).unwrap();
        let d_init = c - sketch0;
        for step in &trace {
            let gap = est.evaluate(&step.alpha) - step.sketch;
            let want = eta.powi(step.iteration as i32) * d_init;
            prop_assert!((gap - want).abs() <= 1e-9 * d_init.abs(), "t={} gap {gap} want {want}", step.iteration);
        }
        prop_assert!((ans.avg - ans.sketch_final).abs() <= cfg.thr + 1e-12);
    }

    #[test]
    fn iteration_count_law(d0 in 0.002f64..50.0, negative in any::<bool>(), eta in 0.2f64..0.9, thr in 1e-4f64..1e-2) {
        let ratio = d0 / thr;
        let t_exact = ratio.ln() / (1.0 / eta).ln();
        prop_assume!((t_exact - t_exact.round()).abs() > 1e-6);
        let d0 = if negative { -d0 } else { d0 };
        let est = LinearEstimator { k: 1.3, c: 10.0 };
        let sketch0 = 10.0 - d0;
        let plan = select_case(&initial_d(&est, &sketch0), 300, 500, &BalanceBand::default());
        let cfg = IterationConfig { eta, lambda: 0.8, thr };
        let ans = iterate(&est, &sketch0, &plan, &cfg, None).unwrap();
        let want = if d0.abs() > thr { t_exact.ceil() as u32 } else { 0 };
        prop_assert_eq!(ans.iterations, want);
    }

    #[test]
    fn step_dominance_and_target(
        d in prop::sample::select(vec![-1.5f64, -0.2, 0.2, 1.5]),
        k in prop::sample::select(vec![-2.0f64, 0.5, 3.0]),
        u_less in any::<bool>(),
        lambda in 0.05f64..0.95,
        eta in 0.1f64..0.9,
    ) {
        let (u, v) = if u_less { (100, 200) } else { (200, 100) };
        let plan = select_case(&d, u, v, &BalanceBand::default());
        let cfg = IterationConfig { eta, lambda, thr: 1e-3 };
        let (da, ds) = step_lengths(&plan, &d, &k, &cfg).unwrap();
        let kda = k * da;
        prop_assert!((d + kda - ds - eta * d).abs() <= 1e-12);
        let (big, small) = match plan.dominant.unwrap() {
            Dominant::AlphaTerm => (kda.abs(), ds.abs()),
            Dominant::SketchTerm => (ds.abs(), kda.abs()),
        };
        prop_assert!(big > small);
        prop_assert!((small / big - lambda).abs() <= 1e-12);
        let expect = |dir: Option<Direction>, x: f64| match dir.unwrap() {
            Direction::Up => x > 0.0,
            Direction::Down => x < 0.0,
        };
        prop_assert!(expect(plan.alpha_direction, kda));
        prop_assert!(expect(plan.sketch_direction, ds));
        match plan.case {
            ModulationCase::RaiseBoth | ModulationCase::LowerBoth => {
                prop_assert_eq!(plan.dominant, Some(Dominant::AlphaTerm));
            }
            ModulationCase::RaiseEstimate => {
                prop_assert_eq!(plan.dominant, Some(Dominant::SketchTerm));
                prop_assert!(kda > 0.0 && kda + ds.abs() > 0.0);
            }
            ModulationCase::LowerEstimate => prop_assert_eq!(plan.dominant, Some(Dominant::SketchTerm)),
            ModulationCase::Balanced => prop_assert!(false, "unexpected balanced plan"),
        }
    }

    #[test]
    fn summarize_is_an_exact_weighted_mean(
        parts in prop::collection::vec((-1000i64..1000, 1i64..50, 1u64..1000), 1..12),
    ) {
        let avgs: Vec<Rational> = parts.iter().map(|&(n, d, _)| Rational::new(n, d)).collect();
        let sizes: Vec<u64> = parts.iter().map(|p| p.2).collect();
        let total: u64 = sizes.iter().sum();
        let got = summarize(&avgs, &sizes, total).unwrap();
        let mut want = Rational::from_integer(0);
        for (a, &s) in avgs.iter().zip(&sizes) {
            want += *a * Rational::from_integer(s as i64);
        }
        prop_assert_eq!(got, want / Rational::from_integer(total as i64));
    }

    #[test]
    fn summarize_ignores_block_order(
        parts in prop::collection::vec((-1e6f64..1e6, 1u64..100_000), 1..16),
        rot in 0usize..16,
    ) {
        let avgs: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let sizes: Vec<u64> = parts.iter().map(|p| p.1).collect();
        let total = sizes.iter().sum();
        let a = summarize(&avgs, &sizes, total).unwrap();
        let mut perm: Vec<(f64, u64)> = parts.clone();
        perm.rotate_left(rot % parts.len());
        perm.reverse();
        let (pa, ps): (Vec<f64>, Vec<u64>) = perm.into_iter().unzip();
        let b = summarize(&pa, &ps, total).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn non_iid_rates_conserve_budget(
        sigmas in prop::collection::vec(0.0f64..60.0, 1..8),
        r in 0.0001f64..0.01,
    ) {
        let b = sigmas.len();
        let sizes = vec![100_000u64; b];
        let total = 100_000 * b as u64;
        let rates = block_sampling_rates(&sigmas, r, total, &sizes).unwrap();
        prop_assume!(rates.iter().all(|&x| x < 1.0));
        let spent: f64 = rates.iter().zip(&sizes).map(|(x, &n)| x * n as f64).sum();
        prop_assert!((spent - r * total as f64).abs() <= 1e-6 * r * total as f64);
        prop_assert!(rates.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn mvb_weights_sum_to_one(xs in prop::collection::vec(0.5f64..300.0, 1..80)) {
        let b = DataBoundaries::new(100.0, 20.0, 0.5, 2.0).unwrap();
        let mut fold = MvbFold::new(b);
        for &a in &xs {
            fold.push(a).unwrap();
        }
        let w = fold.weights();
        prop_assert_eq!(w.len(), 5);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(fold.finish().unwrap() >= uniform_estimate(xs.iter().copied()).unwrap() * (1.0 - 1e-12));
    }

    #[test]
    fn mv_dominates_the_mean(xs in prop::collection::vec(0.01f64..1000.0, 1..60)) {
        let mv = mv_estimate(xs.iter().copied()).unwrap();
        let mean = uniform_estimate(xs.iter().copied()).unwrap();
        prop_assert!(mv >= mean * (1.0 - 1e-12));
    }

    #[test]
    fn uniform_and_stratified_commute_with_shifts(
        xs in prop::collection::vec(-100.0f64..100.0, 2..40),
        d in -50.0f64..50.0,
    ) {
        let shifted: Vec<f64> = xs.iter().map(|a| a + d).collect();
        let us = uniform_estimate(xs.iter().copied()).unwrap();
        let us_d = uniform_estimate(shifted.iter().copied()).unwrap();
        prop_assert!((us_d - us - d).abs() <= 1e-9);
        let half = xs.len() / 2;
        let blocks = vec![xs[..half].to_vec(), xs[half..].to_vec()];
        let blocks_d = vec![shifted[..half].to_vec(), shifted[half..].to_vec()];
        let sizes = [3u64, 5];
        let sts = stratified_estimate(&blocks, &sizes, 8).unwrap();
        let sts_d = stratified_estimate(&blocks_d, &sizes, 8).unwrap();
        prop_assert!((sts_d - sts - d).abs() <= 1e-9);
    }
}

#[test]
fn measure_biased_estimators_are_not_shift_equivariant() {
    let xs = [10.0, 20.0, 35.0, 50.0];
    let ys = [1.0, 3.0, 10.0, 20.0, 35.0, 50.0, 70.0, 75.0, 90.0, 99.0];
    let d = 100.0;
    let shifted: Vec<f64> = xs.iter().map(|a| a + d).collect();
    let mv = mv_estimate(xs).unwrap();
    let mv_d = mv_estimate(shifted.iter().copied()).unwrap();
    assert!((mv_d - (mv + d)).abs() > 1.0, "{mv} {mv_d}");
    // Two values per region so each region's own measure bias shows.
    let b = DataBoundaries::from_cuts(5.0, 25.0, 60.0, 80.0).unwrap();
    let mvb = mvb_estimate(ys, &b).unwrap();
    let mvb_d = mvb_estimate(ys.iter().map(|a| a + d), &b.shifted(d)).unwrap();
    assert!((mvb_d - (mvb + d)).abs() > 0.1, "{mvb} {mvb_d}");
}

#[test]
fn balanced_regions_return_the_sketch() {
    let est = LinearEstimator { k: 1.0, c: 100.4 };
    let plan = select_case(&0.4, 1000, 1005, &BalanceBand::default());
    assert_eq!(plan.case, ModulationCase::Balanced);
    let ans = iterate(&est, &100.0, &plan, &IterationConfig::default(), None).unwrap();
    assert_eq!(ans.avg, 100.0);
    assert_eq!(ans.iterations, 0);
}
