//! Cross-module properties: stability of entropic maps under source
//! perturbations, warm-start efficiency and numerical robustness over a wide
//! range of regularizations.

use ndarray::{Array1, Array2, Axis};
use progot::bench::{exact_ot_oracle, gmm_sample, GaussianComponent};
use progot::{
    cost_matrix, default_eps_scale, entropic_map_batch, progot_fit, sinkhorn_divergence, sinkhorn_solve, AlphaKind,
    CostMatrix, CostModel, DivergenceEps, EpsilonPlan, FitOptions, PointCloud, ScheduleSet, SinkhornOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> PointCloud {
    PointCloud::uniform(Array2::from_shape_fn((n, d), |_| rng.random_range(-spread..spread))).unwrap()
}

/// Entropic map from `source` to `target` evaluated at `at`.
fn entropic_map(source: &PointCloud, target: &PointCloud, eps: f64, at: &Array2<f64>) -> Array2<f64> {
    let sq = CostModel::sq_euclidean();
    let out = sinkhorn_solve(source, target, &sq, eps, &SinkhornOptions::new(1e-6, 1_000_000), None).unwrap();
    assert!(
        out.report.converged,
        "eps {eps}: row error {}",
        out.report.marginal_error
    );
    let g = out.potentials.weight_free_g(target.weights());
    entropic_map_batch(target, &g, eps, &sq, at).unwrap()
}

/// Squared 2-Wasserstein distance `min sum P ||x - y||^2` from the exact oracle.
fn w2_squared(x: &PointCloud, y: &PointCloud) -> f64 {
    let sq = CostModel::sq_euclidean();
    let (p, half) = exact_ot_oracle(x, y, &sq).unwrap();
    let c = cost_matrix(&sq, x, y).unwrap();
    assert!(((&p.matrix * &c).sum() - half).abs() <= 1e-12 * (1.0 + half));
    2.0 * half
}

/// Radius of the smallest ball around the pooled centroid holding every point.
fn pooled_radius(clouds: &[&PointCloud]) -> f64 {
    let all = ndarray::concatenate(Axis(0), &clouds.iter().map(|c| c.points().view()).collect::<Vec<_>>()).unwrap();
    let center = all.mean_axis(Axis(0)).unwrap();
    all.rows()
        .into_iter()
        .map(|r| (&r - &center).mapv(|v| v * v).sum().sqrt())
        .fold(0.0, f64::max)
}

#[test]
fn entropic_maps_are_stable_in_the_source() {
    let sq = CostModel::sq_euclidean();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(8..=32);
        let m = rng.random_range(8..=32);
        let d = rng.random_range(1..=3);
        let mu = cloud(&mut rng, n, d, 1.0);
        let rho = cloud(&mut rng, m, d, 1.5);
        let jitter = [0.01, 0.1, 0.5][seed as usize % 3];
        let moved = mu.points().mapv(|v| v + rng.random_range(-jitter..jitter));
        let mu2 = mu.with_points(moved).unwrap();
        let radius = pooled_radius(&[&mu, &mu2, &rho]);
        let w2 = w2_squared(&mu, &mu2);
        for factor in [0.1, 1.0] {
            let eps = factor * default_eps_scale(&sq, &mu, &rho).unwrap();
            let t = entropic_map(&mu, &rho, eps, mu.points());
            let t2 = entropic_map(&mu2, &rho, eps, mu.points());
            let gap: f64 = (&t - &t2)
                .rows()
                .into_iter()
                .zip(mu.weights())
                .map(|(r, w)| w * r.mapv(|v| v * v).sum())
                .sum();
            let bound = 3.0 * radius * radius / eps * w2;
            assert!(gap <= bound + 1e-8, "seed {seed} eps factor {factor}: {gap} > {bound}");
        }
    }
}

#[test]
fn identical_sources_give_identical_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mu = cloud(&mut rng, 20, 2, 1.0);
    let rho = cloud(&mut rng, 25, 2, 1.0);
    assert_eq!(w2_squared(&mu, &mu), 0.0);
    let eps = default_eps_scale(&CostModel::sq_euclidean(), &mu, &rho).unwrap();
    let a = entropic_map(&mu, &rho, eps, mu.points());
    let b = entropic_map(&mu.clone(), &rho, eps, mu.points());
    assert_eq!(a, b);
}

fn mixture(shift: f64) -> Vec<GaussianComponent> {
    let c = |x: f64, y: f64, s: f64, w: f64| GaussianComponent {
        mean: Array1::from(vec![x + shift, y + shift]),
        cov: Array2::from_diag(&Array1::from(vec![s, s])),
        weight: w,
    };
    vec![c(0.0, 0.0, 0.5, 0.3), c(3.0, 0.0, 0.3, 0.3), c(0.0, 3.0, 0.8, 0.4)]
}

#[test]
fn warm_start_saves_iterations_after_the_first_step() {
    let sq = CostModel::sq_euclidean();
    let mut wins = 0;
    for seed in 0..5 {
        let x = gmm_sample(seed, 96, 2, &mixture(0.0)).unwrap();
        let y = gmm_sample(seed + 50, 96, 2, &mixture(1.5)).unwrap();
        let sched = ScheduleSet::new(
            AlphaKind::Constant,
            4,
            EpsilonPlan::MeanCost { theta: 0.0625 },
            1e-3,
            1e-3,
        )
        .unwrap();
        let warm = progot_fit(&x, &y, &sq, &sched, &FitOptions::default()).unwrap();
        let cold = progot_fit(
            &x,
            &y,
            &sq,
            &sched,
            &FitOptions {
                warm_start: false,
                ..FitOptions::default()
            },
        )
        .unwrap();
        // step 0 has nothing to warm-start from
        assert_eq!(warm.reports[0], cold.reports[0]);
        let tail = |f: &progot::ProgFit| f.reports[1..].iter().map(|r| r.sinkhorn.iterations).sum::<usize>();
        if tail(&warm) <= tail(&cold) {
            wins += 1;
        }
    }
    assert!(wins >= 4, "warm start helped in only {wins} of 5 seeds");
}

fn all_finite<'a>(v: impl IntoIterator<Item = &'a f64>) -> bool {
    v.into_iter().all(|x| x.is_finite())
}

/// Regularizations `10^-1.5 .. 10^1.5` times the default scale.
fn eps_factors() -> Vec<f64> {
    (-3..=3).map(|k| 10f64.powf(0.5 * k as f64)).collect()
}

#[test]
fn everything_stays_finite_across_three_decades_of_eps() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for p in [2.0, 1.5] {
        let model = CostModel::new(p).unwrap();
        let x = cloud(&mut rng, 40, 3, 2.0);
        let y = cloud(&mut rng, 30, 3, 1.0);
        let scale = default_eps_scale(&model, &x, &y).unwrap();
        for factor in eps_factors() {
            let eps = factor * scale;
            let out = sinkhorn_solve(&x, &y, &model, eps, &SinkhornOptions::new(1e-3, 100_000), None).unwrap();
            assert!(out.report.converged, "p={p} factor {factor}");
            assert!(all_finite(out.potentials.f.iter().chain(&out.potentials.g)));
            assert!(all_finite(&out.coupling.matrix));
            assert!(out.coupling.matrix.iter().all(|v| *v <= 1.0 + 1e-9));
            assert!(out.report.dual_objective.is_finite());

            let g = out.potentials.weight_free_g(y.weights());
            let probe = cloud(&mut rng, 10, 3, 3.0);
            assert!(all_finite(
                &entropic_map_batch(&y, &g, eps, &model, probe.points()).unwrap()
            ));

            let sched =
                ScheduleSet::new(AlphaKind::Decelerated, 3, EpsilonPlan::Fixed(vec![eps; 4]), 1e-2, 1e-3).unwrap();
            let fit = progot_fit(&x, &y, &model, &sched, &FitOptions::default()).unwrap();
            assert!(fit.converged(), "p={p} factor {factor}");
            assert!(all_finite(&fit.coupling.matrix));
            assert!(all_finite(&fit.state.transport_batch(probe.points()).unwrap()));

            let div = sinkhorn_divergence(&x, &y, &model, DivergenceEps::Fixed(eps)).unwrap();
            assert!(div.is_finite() && div >= -1e-8, "p={p} factor {factor}: {div}");
        }
    }
}

#[test]
fn cached_kernel_matches_plain_log_sum_exp_at_small_eps() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let model = CostModel::sq_euclidean();
    let x = cloud(&mut rng, 25, 2, 5.0);
    let y = cloud(&mut rng, 20, 2, 5.0);
    let dense = CostMatrix::new(&model, &x, &y).unwrap();
    let lazy = CostMatrix::with_budget(&model, &x, &y, 0).unwrap();
    assert!(dense.is_dense() && !lazy.is_dense());
    let scale = default_eps_scale(&model, &x, &y).unwrap();
    for factor in [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
        // same iteration budget for both, so the arithmetic is compared step for step
        let opts = SinkhornOptions::new(1e-300, 3_000);
        let a = progot::sinkhorn::sinkhorn_solve_cost(&dense, x.weights(), y.weights(), factor * scale, &opts, None)
            .unwrap();
        let b = progot::sinkhorn::sinkhorn_solve_cost(&lazy, x.weights(), y.weights(), factor * scale, &opts, None)
            .unwrap();
        assert_eq!(a.report.iterations, b.report.iterations);
        for (u, v) in a.coupling.matrix.iter().zip(&b.coupling.matrix) {
            assert!((u - v).abs() <= 1e-9, "factor {factor}: {u} vs {v}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn divergence_is_symmetric_and_nonnegative(seed in 0u64..10_000, n in 2usize..20, m in 2usize..20, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = cloud(&mut rng, n, d, 1.0);
        let y = cloud(&mut rng, m, d, 2.0);
        let sq = CostModel::sq_euclidean();
        let eps = DivergenceEps::Fixed(default_eps_scale(&sq, &x, &y).unwrap());
        let dxy = sinkhorn_divergence(&x, &y, &sq, eps).unwrap();
        let dyx = sinkhorn_divergence(&y, &x, &sq, eps).unwrap();
        prop_assert!((dxy - dyx).abs() <= 1e-8);
        prop_assert!(dxy >= -1e-8);
        prop_assert!(sinkhorn_divergence(&x, &x, &sq, eps).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn oracle_lower_bounds_entropic_plans(seed in 0u64..10_000, n in 1usize..16, p in prop::sample::select(vec![1.5, 2.0, 3.0])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = cloud(&mut rng, n, 2, 1.0);
        let y = cloud(&mut rng, n, 2, 1.0);
        let model = CostModel::new(p).unwrap();
        let c = cost_matrix(&model, &x, &y).unwrap();
        let (_, opt) = exact_ot_oracle(&x, &y, &model).unwrap();
        if let Ok(scale) = default_eps_scale(&model, &x, &y) {
            let out = sinkhorn_solve(&x, &y, &model, scale, &SinkhornOptions::new(1e-12, 100_000), None).unwrap();
            // the plan is feasible up to tau, so allow that much slack on the cost
            let slack = 1e-10 * c.iter().copied().fold(0.0, f64::max);
            prop_assert!(opt <= (&out.coupling.matrix * &c).sum() + slack);
        }
    }
}
