//! Command-line front end: reads point clouds, runs solvers and benchmarks,
//! and writes versioned JSON reports.
//!
//! Reports go to stdout (or `--out`), a short human summary to stderr.
//! Exit status is 0 on success, 2 for invalid input, 3 when a solve does not
//! converge under `--strict`, and 1 otherwise. `PROGOT_THREADS` caps the
//! worker threads used by the solvers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod bench;
pub mod config;
pub mod error;
pub mod report;
pub mod solve;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use progot::bench::{coupling_metrics, CouplingMetrics};
use progot::io::{read_point_cloud, write_point_cloud, CloudFormat};
use progot::progot::{EpsilonSchedule, StepReport};
use progot::{
    cost_matrix, default_eps_scale, entropic::sinkhorn_divergence_with, DivergenceEps, EpsilonPlan, PointCloud,
    ProgState, ScheduleSet, SinkhornOptions,
};
use serde::Serialize;

pub use args::{Cli, Command};
pub use config::{Defaults, EpsSpec, RunConfig, Solver};
pub use error::CliError;

/// Environment variable holding the worker-thread cap.
pub const THREADS_ENV: &str = "PROGOT_THREADS";

/// Parse `argv` (program name first), run the command and return the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match init_threads().and_then(|_| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| error::config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // fails only if the pool already exists, e.g. on a second in-process call
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn read_cloud(path: &Path, weighted: bool) -> Result<PointCloud, CliError> {
    read_point_cloud(path, CloudFormat::from_path(path, weighted)).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

fn emit<C: Serialize, R: Serialize>(command: &str, config: &C, result: &R, out: Option<&Path>) -> Result<(), CliError> {
    let bytes = report::to_bytes(&report::Report {
        schema: report::SCHEMA,
        command,
        config,
        result,
    })?;
    match out {
        Some(path) => std::fs::write(path, &bytes).map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(&bytes)
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Output {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn strict_check(strict: bool, converged: bool, what: &str) -> Result<(), CliError> {
    if strict && !converged {
        Err(CliError::Strict(what.into()))
    } else {
        Ok(())
    }
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[derive(Debug, Serialize)]
struct CoupleResult {
    solver: Solver,
    n: usize,
    m: usize,
    d: usize,
    converged: bool,
    total_iterations: usize,
    epsilons: Vec<f64>,
    metrics: CouplingMetrics,
    steps: Vec<StepReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheduler: Option<EpsilonSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coupling: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize)]
struct FitResult {
    solver: Solver,
    state: PathBuf,
    n: usize,
    m: usize,
    d: usize,
    converged: bool,
    total_iterations: usize,
    epsilons: Vec<f64>,
    steps: Vec<StepReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheduler: Option<EpsilonSchedule>,
}

#[derive(Debug, Serialize)]
struct TransportConfig<'a> {
    state: &'a Path,
    points: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    cloud_out: Option<&'a Path>,
}

#[derive(Debug, Serialize)]
struct TransportResult {
    n: usize,
    d: usize,
    steps: usize,
    points: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct DivergenceConfig<'a> {
    p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    tau: f64,
    max_iter: usize,
    inputs: [&'a Path; 2],
}

#[derive(Debug, Serialize)]
struct DivergenceResult {
    divergence: f64,
    eps: f64,
}

#[derive(Debug, Serialize)]
struct ScheduleResult {
    steps: usize,
    #[serde(flatten)]
    schedule: ScheduleSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheduler: Option<EpsilonSchedule>,
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Couple {
            source,
            target,
            solve,
            omit_coupling,
            io,
        } => {
            let cfg = RunConfig::resolve(
                &solve,
                Defaults::coupling(),
                0.1,
                vec![source.clone(), target.clone()],
                io.out.clone(),
            )?;
            let solver = cfg.single_solver()?;
            let x = read_cloud(&source, io.weighted)?;
            let y = read_cloud(&target, io.weighted)?;
            let out = solve::solve(&cfg, solver, &x, &y, cfg.seed)?;
            let c = cost_matrix(&cfg.model(), &x, &y)?;
            let metrics = coupling_metrics(&out.coupling, &c)?;
            let result = CoupleResult {
                solver,
                n: x.len(),
                m: y.len(),
                d: x.dim(),
                converged: out.converged(),
                total_iterations: out.iterations().iter().sum(),
                epsilons: out.epsilons(),
                metrics,
                steps: out.steps.clone(),
                scheduler: out.scheduler.clone(),
                coupling: (!omit_coupling).then(|| rows(&out.coupling.matrix)),
            };
            eprintln!(
                "{}: {} iterations over {} steps, cost {:.6e}, marginal errors {:.3e} / {:.3e}{}",
                solver.name(),
                result.total_iterations,
                result.steps.len(),
                metrics.transport_cost,
                metrics.row_error,
                metrics.col_error,
                if result.converged { "" } else { " (not converged)" }
            );
            emit("couple", &cfg, &result, io.out.as_deref())?;
            strict_check(io.strict, result.converged, "couple")
        }
        Command::FitMap {
            source,
            target,
            state,
            holdout,
            solve,
            io,
        } => {
            let cfg = RunConfig::resolve(
                &solve,
                Defaults::map(),
                holdout,
                vec![source.clone(), target.clone()],
                io.out.clone(),
            )?;
            let solver = cfg.single_solver()?;
            let x = read_cloud(&source, io.weighted)?;
            let y = read_cloud(&target, io.weighted)?;
            let out = solve::solve(&cfg, solver, &x, &y, cfg.seed)?;
            out.state.save(&state).map_err(|e| match e {
                progot::Error::Io(source) => CliError::Output {
                    path: state.clone(),
                    source,
                },
                other => other.into(),
            })?;
            let result = FitResult {
                solver,
                state,
                n: x.len(),
                m: y.len(),
                d: x.dim(),
                converged: out.converged(),
                total_iterations: out.iterations().iter().sum(),
                epsilons: out.epsilons(),
                steps: out.steps.clone(),
                scheduler: out.scheduler.clone(),
            };
            eprintln!(
                "fitted {} steps in {} iterations, saved to {}{}",
                result.steps.len(),
                result.total_iterations,
                result.state.display(),
                if result.converged { "" } else { " (not converged)" }
            );
            emit("fit-map", &cfg, &result, io.out.as_deref())?;
            strict_check(io.strict, result.converged, "fit-map")
        }
        Command::Transport {
            state,
            points,
            cloud_out,
            io,
        } => {
            let map = ProgState::load(&state).map_err(|source| CliError::Input {
                path: state.clone(),
                source,
            })?;
            let x = read_cloud(&points, io.weighted)?;
            let mapped = map.transport_batch(x.points())?;
            if let Some(path) = &cloud_out {
                let cloud = x.with_points(mapped.clone())?;
                write_point_cloud(path, &cloud, CloudFormat::from_path(path, io.weighted)).map_err(|e| match e {
                    progot::Error::Io(source) => CliError::Output {
                        path: path.clone(),
                        source,
                    },
                    other => other.into(),
                })?;
            }
            eprintln!("mapped {} points through {} steps", x.len(), map.steps.len());
            let cfg = TransportConfig {
                state: &state,
                points: &points,
                cloud_out: cloud_out.as_deref(),
            };
            let result = TransportResult {
                n: x.len(),
                d: x.dim(),
                steps: map.steps.len(),
                points: rows(&mapped),
            };
            emit("transport", &cfg, &result, io.out.as_deref())
        }
        Command::Divergence {
            a,
            b,
            p,
            eps,
            tau,
            max_iter,
            io,
        } => {
            let model = progot::CostModel::new(p).map_err(|e| error::config(e.to_string()))?;
            if !(tau > 0.0) || max_iter == 0 {
                return Err(error::config("--tau must be positive and --max-iter at least 1"));
            }
            let x = read_cloud(&a, io.weighted)?;
            let y = read_cloud(&b, io.weighted)?;
            let used = match eps {
                Some(e) if e > 0.0 && e.is_finite() => e,
                Some(e) => return Err(error::config(format!("--eps must be positive, got {e}"))),
                None => default_eps_scale(&model, &y, &y)?,
            };
            let value = sinkhorn_divergence_with(
                &x,
                &y,
                &model,
                DivergenceEps::Fixed(used),
                &SinkhornOptions::new(tau, max_iter),
            )?;
            eprintln!("divergence {value:.6e} at eps {used:.6e}");
            let cfg = DivergenceConfig {
                p,
                eps,
                tau,
                max_iter,
                inputs: [&a, &b],
            };
            emit(
                "divergence",
                &cfg,
                &DivergenceResult {
                    divergence: value,
                    eps: used,
                },
                io.out.as_deref(),
            )
        }
        Command::Schedule {
            source,
            target,
            holdout,
            solve,
            io,
        } => {
            let inputs: Vec<PathBuf> = source.iter().chain(&target).cloned().collect();
            let cfg = RunConfig::resolve(&solve, Defaults::coupling(), holdout, inputs, io.out.clone())?;
            let k = solve::last_step(&cfg, cfg.single_solver()?);
            let (plan, scheduler) = match (&cfg.eps, &source, &target) {
                (EpsSpec::Scheduler, Some(s), Some(t)) => {
                    let x = read_cloud(s, io.weighted)?;
                    let y = read_cloud(t, io.weighted)?;
                    solve::epsilon_plan(&cfg, k, &x, &y, cfg.seed)?
                }
                (EpsSpec::Scheduler, _, _) => return Err(error::config("--scheduler needs source and target clouds")),
                (_, None, None) => (solve::data_free_plan(&cfg).expect("not the scheduler"), None),
                _ => return Err(error::config("clouds are only used with --scheduler")),
            };
            let schedule = ScheduleSet::new(cfg.kind, k, plan, cfg.tau_init, cfg.tau)?;
            if let EpsilonPlan::Fixed(e) = &schedule.epsilons {
                eprintln!("{} steps, eps {:.4e} -> {:.4e}", k + 1, e[0], e[k]);
            } else {
                eprintln!("{} steps, {} schedule", k + 1, cfg.kind);
            }
            let result = ScheduleResult {
                steps: k + 1,
                schedule,
                scheduler,
            };
            emit("schedule", &cfg, &result, io.out.as_deref())
        }
        Command::BenchBlur {
            n,
            side,
            sigma,
            solve,
            timings,
            io,
        } => {
            let mut defaults = Defaults::coupling();
            defaults.solver = args::SolverArg::Both;
            let cfg = RunConfig::resolve(&solve, defaults, 0.1, vec![], io.out.clone())?;
            let out = bench::run_blur(&cfg, n, side, &sigma, timings)?;
            for r in &out.records {
                eprintln!(
                    "sigma {} {}: trace {:.4} KL {:.4}",
                    r.config["sigma"], r.solver, r.metrics["trace"], r.metrics["kl_from_identity"]
                );
            }
            emit("bench-blur", &cfg, &out, io.out.as_deref())?;
            strict_check(io.strict, out.converged, "bench-blur")
        }
        Command::BenchMap {
            ns,
            seeds,
            d,
            n_test,
            solvers,
            folds,
            holdout,
            solve,
            timings,
            io,
        } => {
            let cfg = RunConfig::resolve(&solve, Defaults::map(), holdout, vec![], io.out.clone())?;
            cfg.single_solver()?;
            let out = bench::run_map(&cfg, &ns, seeds, d, n_test, &solvers, folds, timings)?;
            for s in &out.summary {
                eprintln!("n {} {}: median MSE {:.5}", s.n, s.solver, s.median_mse);
            }
            emit("bench-map", &cfg, &out, io.out.as_deref())?;
            strict_check(io.strict, out.converged, "bench-map")
        }
    }
}
