//! One coupling or map solve under a [`RunConfig`].

use progot::progot::{epsilon_schedule, holdout_split, EpsilonSchedule, ProgStep, StepReport};
use progot::{
    alpha_schedule, default_eps_scale, progot_fit, sinkhorn_solve, Coupling, EpsilonPlan, FitOptions, PointCloud,
    ProgState, ScheduleSet, SinkhornOptions,
};

use crate::config::{EpsSpec, RunConfig, Solver};
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solver: Solver,
    /// Row `i` belongs to the original source point `i`.
    pub coupling: Coupling,
    /// Map that replays the solve on new points.
    pub state: ProgState,
    pub steps: Vec<StepReport>,
    pub scheduler: Option<EpsilonSchedule>,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.steps.iter().all(|s| s.sinkhorn.converged)
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.sinkhorn.iterations).collect()
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.eps).collect()
    }
}

/// Steps before the last one for `solver`.
pub fn last_step(cfg: &RunConfig, solver: Solver) -> usize {
    match solver {
        Solver::Sinkhorn => 0,
        Solver::Progot => cfg.k,
    }
}

/// Regularization plan for `k + 1` steps; the scheduler holds out part of
/// the target, seeded with `seed`.
pub fn epsilon_plan(
    cfg: &RunConfig,
    k: usize,
    source: &PointCloud,
    target: &PointCloud,
    seed: u64,
) -> Result<(EpsilonPlan, Option<EpsilonSchedule>), CliError> {
    if let Some(plan) = data_free_plan(cfg) {
        return Ok((plan, None));
    }
    let (train, held_out) = holdout_split(target, cfg.holdout, seed)?;
    let (_, times) = alpha_schedule(cfg.kind, k);
    let es = epsilon_schedule(
        &train,
        &held_out,
        source,
        &cfg.model(),
        &cfg.scales,
        cfg.beta0,
        &times,
        cfg.tau,
    )?;
    Ok((EpsilonPlan::Fixed(es.epsilons.clone()), Some(es)))
}

/// The plan when it does not depend on the clouds (everything but the scheduler).
pub fn data_free_plan(cfg: &RunConfig) -> Option<EpsilonPlan> {
    match &cfg.eps {
        EpsSpec::Theta(theta) => Some(EpsilonPlan::MeanCost { theta: *theta }),
        EpsSpec::List(list) => Some(EpsilonPlan::Fixed(list.clone())),
        EpsSpec::Scheduler => None,
    }
}

pub fn solve(
    cfg: &RunConfig,
    solver: Solver,
    source: &PointCloud,
    target: &PointCloud,
    seed: u64,
) -> Result<SolveOutcome, CliError> {
    let model = cfg.model();
    let k = last_step(cfg, solver);
    let (plan, scheduler) = epsilon_plan(cfg, k, source, target, seed)?;
    match solver {
        Solver::Sinkhorn => {
            let eps = match plan {
                EpsilonPlan::MeanCost { theta } => theta * default_eps_scale(&model, source, target)?,
                EpsilonPlan::Fixed(e) => e[0],
            };
            let opts = SinkhornOptions::new(cfg.tau, cfg.max_iter);
            let out = sinkhorn_solve(source, target, &model, eps, &opts, None)?;
            let step = ProgStep {
                g: out.potentials.weight_free_g(target.weights()),
                eps,
                alpha: 1.0,
            };
            Ok(SolveOutcome {
                solver,
                coupling: out.coupling,
                state: ProgState::new(target.clone(), vec![step], model)?,
                steps: vec![StepReport {
                    eps,
                    alpha: 1.0,
                    tau: cfg.tau,
                    sinkhorn: out.report,
                }],
                scheduler,
            })
        }
        Solver::Progot => {
            let sched = ScheduleSet::new(cfg.kind, k, plan, cfg.tau_init, cfg.tau)?;
            let opts = FitOptions {
                max_iter: cfg.max_iter,
                warm_start: cfg.warm_start,
                record_trajectory: false,
            };
            let fit = progot_fit(source, target, &model, &sched, &opts)?;
            Ok(SolveOutcome {
                solver,
                coupling: fit.coupling,
                state: fit.state,
                steps: fit.reports,
                scheduler,
            })
        }
    }
}
