//! Benchmark runners behind `bench-blur` and `bench-map`.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2};
use progot::bench::{
    affine_ground_truth, affine_map, blur_task, coupling_metrics, cv_entropic_eps, gaussian_points,
    identity_recovery_metrics, mean_squared_error, noise_images, BenchRecord, GroundTruthTask,
};
use progot::{cost_matrix, entropic_map_batch, sinkhorn_solve, SinkhornOptions};
use serde::Serialize;

use crate::args::MapSolver;
use crate::config::{RunConfig, Solver};
use crate::error::{config, CliError};
use crate::solve::solve;

/// Offset between a task seed and the seed of its held-out test points.
pub const TEST_SEED_OFFSET: u64 = 1000;

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn elapsed(start: Instant, timings: bool) -> Option<f64> {
    timings.then(|| start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub summary: Vec<MapSummary>,
    /// Every inner solve met its threshold.
    pub converged: bool,
}

/// Identity recovery between seeded noise images and their blurred copies.
pub fn run_blur(
    cfg: &RunConfig,
    n: usize,
    side: usize,
    sigmas: &[f64],
    timings: bool,
) -> Result<BenchOutcome, CliError> {
    if cfg.p != 2.0 {
        return Err(config("bench-blur uses the squared Euclidean cost (--p 2)"));
    }
    let images = noise_images(cfg.seed, n, side);
    let model = cfg.model();
    let mut records = Vec::new();
    let mut converged = true;
    for &sigma in sigmas {
        let task = blur_task(&images, sigma)?;
        let c = cost_matrix(&model, &task.source, &task.target)?;
        for solver in cfg.solvers() {
            let start = Instant::now();
            let out = solve(cfg, solver, &task.source, &task.target, cfg.seed)?;
            let wall = elapsed(start, timings);
            let id = identity_recovery_metrics(&out.coupling)?;
            let cm = coupling_metrics(&out.coupling, &c)?;
            converged &= out.converged();
            let eps = out.epsilons();
            records.push(BenchRecord {
                task: "blur".into(),
                solver: solver.name().into(),
                seed: cfg.seed,
                n,
                config: BTreeMap::from([
                    ("sigma".into(), sigma),
                    ("side".into(), side as f64),
                    ("K".into(), (eps.len() - 1) as f64),
                    ("eps_first".into(), eps[0]),
                    ("eps_last".into(), eps[eps.len() - 1]),
                ]),
                metrics: BTreeMap::from([
                    ("trace".into(), id.trace),
                    ("kl_from_identity".into(), id.kl_from_identity),
                    ("transport_cost".into(), cm.transport_cost),
                    ("row_error".into(), cm.row_error),
                    ("col_error".into(), cm.col_error),
                    ("converged".into(), flag(out.converged())),
                ]),
                iterations: out.iterations(),
                wall_time_s: wall,
            });
        }
    }
    Ok(BenchOutcome {
        records,
        summary: Vec::new(),
        converged,
    })
}

/// Affine task `T(x) = A x + b` with `A = diag(2, 1, ..., 1)` and `b = e_1`,
/// plus `n_test` fresh source points and their true images.
pub fn map_task(
    seed: u64,
    n: usize,
    d: usize,
    n_test: usize,
) -> Result<(GroundTruthTask, Array2<f64>, Array2<f64>), CliError> {
    let mut diag = Array1::ones(d);
    diag[0] = 2.0;
    let a = Array2::from_diag(&diag);
    let mut b = Array1::zeros(d);
    b[0] = 1.0;
    let task = affine_ground_truth(seed, n, d, &a, &b)?;
    let test = gaussian_points(seed + TEST_SEED_OFFSET, n_test, d);
    let truth = affine_map(&a, &b, &test);
    Ok((task, test, truth))
}

/// Mapped test points, inner iterations, convergence and regularizations.
pub type MapRun = (Array2<f64>, Vec<usize>, bool, Vec<f64>);

/// Progressive map fitted on the full task under `cfg`.
pub fn run_map_progot(
    cfg: &RunConfig,
    task: &GroundTruthTask,
    test: &Array2<f64>,
    seed: u64,
) -> Result<MapRun, CliError> {
    let out = solve(cfg, Solver::Progot, &task.source, &task.target, seed)?;
    let mapped = out.state.transport_batch(test)?;
    Ok((mapped, out.iterations(), out.converged(), out.epsilons()))
}

/// Entropic map with its regularization chosen by `folds`-fold cross-validation.
pub fn run_map_entropic(
    cfg: &RunConfig,
    task: &GroundTruthTask,
    test: &Array2<f64>,
    folds: usize,
    seed: u64,
) -> Result<MapRun, CliError> {
    let model = cfg.model();
    let cv = cv_entropic_eps(&task.source, &task.target, &model, &cfg.scales, folds, seed, cfg.tau)?;
    let opts = SinkhornOptions::new(cfg.tau, cfg.max_iter);
    let out = sinkhorn_solve(&task.source, &task.target, &model, cv.eps, &opts, None)?;
    let g = out.potentials.weight_free_g(task.target.weights());
    let mapped = entropic_map_batch(&task.target, &g, cv.eps, &model, test)?;
    Ok((mapped, vec![out.report.iterations], out.report.converged, vec![cv.eps]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    pub solver: String,
    pub n: usize,
    pub median_mse: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

/// Held-out MSE sweep over sample sizes and seeds `cfg.seed..cfg.seed + seeds`.
#[allow(clippy::too_many_arguments)]
pub fn run_map(
    cfg: &RunConfig,
    ns: &[usize],
    seeds: u64,
    d: usize,
    n_test: usize,
    solvers: &[MapSolver],
    folds: usize,
    timings: bool,
) -> Result<BenchOutcome, CliError> {
    if cfg.p != 2.0 {
        return Err(config("affine ground truth needs the squared Euclidean cost (--p 2)"));
    }
    if seeds == 0 || ns.is_empty() || solvers.is_empty() || d == 0 || n_test == 0 {
        return Err(config("need at least one seed, size, solver, dimension and test point"));
    }
    let mut records = Vec::new();
    let mut summary = Vec::new();
    let mut converged = true;
    for &n in ns {
        for solver in solvers {
            let mut mses = Vec::new();
            for seed in cfg.seed..cfg.seed + seeds {
                let (task, test, truth) = map_task(seed, n, d, n_test)?;
                let start = Instant::now();
                let (mapped, iterations, ok, eps) = match solver {
                    MapSolver::Progot => run_map_progot(cfg, &task, &test, seed)?,
                    MapSolver::Entropic => run_map_entropic(cfg, &task, &test, folds, seed)?,
                };
                let wall = elapsed(start, timings);
                let mse = mean_squared_error(&mapped, &truth)?;
                converged &= ok;
                mses.push(mse);
                let mut config = BTreeMap::from([
                    ("d".into(), d as f64),
                    ("n_test".into(), n_test as f64),
                    ("eps_first".into(), eps[0]),
                    ("eps_last".into(), eps[eps.len() - 1]),
                ]);
                if *solver == MapSolver::Progot {
                    config.insert("K".into(), (eps.len() - 1) as f64);
                } else {
                    config.insert("folds".into(), folds as f64);
                }
                records.push(BenchRecord {
                    task: "affine".into(),
                    solver: solver.to_string(),
                    seed,
                    n,
                    config,
                    metrics: BTreeMap::from([("mse".into(), mse), ("converged".into(), flag(ok))]),
                    iterations,
                    wall_time_s: wall,
                });
            }
            summary.push(MapSummary {
                solver: solver.to_string(),
                n,
                median_mse: median(&mses),
            });
        }
    }
    Ok(BenchOutcome {
        records,
        summary,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn map_task_truth_is_affine() {
        let (task, test, truth) = map_task(3, 10, 2, 4).unwrap();
        assert_eq!(task.source.len(), 10);
        for (x, y) in test.rows().into_iter().zip(truth.rows()) {
            assert_eq!(y[0], 2.0 * x[0] + 1.0);
            assert_eq!(y[1], x[1]);
        }
    }
}
