use ndarray::{Array1, Array2};
use serde::Serialize;

use super::schedule::{EpsilonPlan, ScheduleSet};
use super::state::{ProgState, ProgStep};
use crate::coupling::Coupling;
use crate::entropic::displacement_batch;
use crate::geometry::{default_eps_scale, CostMatrix, CostModel, PointCloud};
use crate::sinkhorn::{solve_potentials, SinkhornOptions, SinkhornReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Iteration cap of every inner solve.
    pub max_iter: usize,
    /// Start step `k` from `(1 - alpha_k)` times the previous potentials.
    pub warm_start: bool,
    /// Keep the moved source points `X^(k)` of every step.
    pub record_trajectory: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            warm_start: true,
            record_trajectory: false,
        }
    }
}

/// Per-step record of a progressive fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub eps: f64,
    pub alpha: f64,
    pub tau: f64,
    #[serde(flatten)]
    pub sinkhorn: SinkhornReport,
}

#[derive(Debug, Clone)]
pub struct ProgFit {
    pub state: ProgState,
    /// Entropic coupling of the last step; row `i` belongs to the original `x_i`.
    pub coupling: Coupling,
    pub reports: Vec<StepReport>,
    /// `X^(0), ..., X^(K)` when requested.
    pub trajectory: Vec<Array2<f64>>,
}

impl ProgFit {
    pub fn total_iterations(&self) -> usize {
        self.reports.iter().map(|r| r.sinkhorn.iterations).sum()
    }

    pub fn converged(&self) -> bool {
        self.reports.last().is_some_and(|r| r.sinkhorn.converged)
    }
}

/// Progressive entropic OT between `source` and `target`.
///
/// Each step solves entropic OT from the current points to the target, then
/// moves the points a fraction `alpha_k` along the entropic map. Inner
/// non-convergence is recorded in the step reports rather than raised.
pub fn progot_fit(
    source: &PointCloud,
    target: &PointCloud,
    model: &CostModel,
    sched: &ScheduleSet,
    opts: &FitOptions,
) -> Result<ProgFit> {
    sched.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: source.dim(),
        });
    }
    let a = source.weights();
    let b = target.weights();
    let last = sched.k();
    let mut current = source.clone();
    let mut potentials: Option<(Array1<f64>, Array1<f64>)> = None;
    let mut steps = Vec::with_capacity(last + 1);
    let mut reports = Vec::with_capacity(last + 1);
    let mut trajectory = Vec::new();
    let mut coupling = None;

    for k in 0..=last {
        let alpha = sched.alphas[k];
        let eps = match &sched.epsilons {
            EpsilonPlan::Fixed(e) => e[k],
            EpsilonPlan::MeanCost { theta } => theta * default_eps_scale(model, &current, target)?,
        };
        let tau = sched.thresholds[k];
        if opts.record_trajectory {
            trajectory.push(current.points().clone());
        }
        let cost = CostMatrix::new(model, &current, target)?;
        let init = match (&potentials, opts.warm_start) {
            (Some((f, g)), true) => Some((f * (1.0 - alpha), g * (1.0 - alpha))),
            _ => None,
        };
        let (pot, report) = solve_potentials(
            &cost,
            a,
            b,
            eps,
            &SinkhornOptions::new(tau, opts.max_iter),
            init.as_ref().map(|(f, g)| (f, g)),
        )?;
        reports.push(StepReport {
            eps,
            alpha,
            tau,
            sinkhorn: report,
        });
        let g = pot.weight_free_g(b);
        if k < last {
            let z = displacement_batch(target, &g, eps, model, current.points(), Some(&cost));
            let mut moved = current.points().clone();
            moved.scaled_add(-alpha, &z);
            if !moved.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite points after step {k}")));
            }
            current = current.with_points(moved)?;
        } else {
            coupling = Some(Coupling {
                matrix: pot.coupling_matrix(&cost),
                row_weights: a.clone(),
                col_weights: b.clone(),
            });
        }
        steps.push(ProgStep { g, eps, alpha });
        potentials = Some((pot.f, pot.g));
    }

    Ok(ProgFit {
        state: ProgState::new(target.clone(), steps, *model)?,
        coupling: coupling.expect("loop runs at least once"),
        reports,
        trajectory,
    })
}
