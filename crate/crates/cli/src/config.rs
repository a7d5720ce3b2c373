//! Validated run configuration resolved from command-line arguments.

use std::path::PathBuf;

use progot::progot::{default_scales, threshold_schedule, DEFAULT_THETA};
use progot::{AlphaKind, CostModel};
use serde::Serialize;

use crate::args::{SolveArgs, SolverArg};
use crate::error::{config, CliError};

/// How regularizations are chosen; exactly one rule applies per run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsSpec {
    /// `theta` times the mean-cost scale of the current step.
    Theta(f64),
    /// One value per step.
    List(Vec<f64>),
    /// Target self-transport on a held-out split.
    Scheduler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Sinkhorn,
    Progot,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Sinkhorn => "sinkhorn",
            Solver::Progot => "progot",
        }
    }
}

/// Per-command defaults for options the user left unset.
#[derive(Debug, Clone)]
pub struct Defaults {
    pub solver: SolverArg,
    pub k: usize,
    pub eps: EpsSpec,
}

impl Defaults {
    /// Coupling mode: ProgOT with four steps and the `theta = 2^-4` rule.
    pub fn coupling() -> Self {
        Self {
            solver: SolverArg::Progot,
            k: 4,
            eps: EpsSpec::Theta(DEFAULT_THETA),
        }
    }

    /// Map mode: sixteen constant-speed steps with scheduled regularization.
    pub fn map() -> Self {
        Self {
            solver: SolverArg::Progot,
            k: 16,
            eps: EpsSpec::Scheduler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub p: f64,
    pub solver: SolverArg,
    /// Progressive steps before the last; plain Sinkhorn ignores it.
    pub k: usize,
    pub kind: AlphaKind,
    pub eps: EpsSpec,
    pub beta0: f64,
    pub scales: Vec<f64>,
    /// Held-out target fraction used by the scheduler.
    pub holdout: f64,
    pub tau_init: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub warm_start: bool,
    pub inputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn resolve(
        args: &SolveArgs,
        defaults: Defaults,
        holdout: f64,
        inputs: Vec<PathBuf>,
        output: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let eps = match (&args.theta, &args.eps, args.scheduler) {
            (Some(t), None, false) => EpsSpec::Theta(*t),
            (None, Some(list), false) => EpsSpec::List(list.clone()),
            (None, None, true) => EpsSpec::Scheduler,
            (None, None, false) => defaults.eps,
            _ => return Err(config("--theta, --eps and --scheduler are mutually exclusive")),
        };
        let cfg = Self {
            p: args.p,
            solver: args.solver.unwrap_or(defaults.solver),
            k: args.k.unwrap_or(defaults.k),
            kind: args.kind,
            eps,
            beta0: args.beta0,
            scales: args.scales.clone().unwrap_or_else(default_scales),
            holdout,
            tau_init: args.tau_init.unwrap_or(args.tau),
            tau: args.tau,
            max_iter: args.max_iter,
            seed: args.seed,
            warm_start: !args.no_warm_start,
            inputs,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        CostModel::new(self.p).map_err(|e| config(e.to_string()))?;
        threshold_schedule(self.tau_init, self.tau, self.k).map_err(|e| config(e.to_string()))?;
        positive("beta0", self.beta0)?;
        if self.scales.is_empty() {
            return Err(config("--scales must not be empty"));
        }
        for s in &self.scales {
            positive("every scale", *s)?;
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(config(format!("--holdout must lie in (0, 1), got {}", self.holdout)));
        }
        if self.max_iter == 0 {
            return Err(config("--max-iter must be at least 1"));
        }
        match &self.eps {
            EpsSpec::Theta(t) => positive("theta", *t)?,
            EpsSpec::List(list) => {
                for e in list {
                    positive("every epsilon", *e)?;
                }
                let want = match self.solver {
                    SolverArg::Sinkhorn => 1,
                    SolverArg::Progot => self.k + 1,
                    SolverArg::Both => {
                        return Err(config("an explicit --eps list needs a single solver"));
                    }
                };
                if list.len() != want {
                    return Err(config(format!("--eps needs {want} values, got {}", list.len())));
                }
            }
            EpsSpec::Scheduler => {}
        }
        Ok(())
    }

    pub fn model(&self) -> CostModel {
        CostModel::new(self.p).expect("validated")
    }

    /// The single solver of this run.
    pub fn single_solver(&self) -> Result<Solver, CliError> {
        match self.solver {
            SolverArg::Sinkhorn => Ok(Solver::Sinkhorn),
            SolverArg::Progot => Ok(Solver::Progot),
            SolverArg::Both => Err(config("--solver both is only accepted by bench-blur")),
        }
    }

    pub fn solvers(&self) -> Vec<Solver> {
        match self.solver {
            SolverArg::Sinkhorn => vec![Solver::Sinkhorn],
            SolverArg::Progot => vec![Solver::Progot],
            SolverArg::Both => vec![Solver::Sinkhorn, Solver::Progot],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::Cli;
    use crate::args::Command;
    use clap::Parser;

    fn solve_args(argv: &[&str]) -> SolveArgs {
        let mut full = vec!["progot", "schedule"];
        full.extend_from_slice(argv);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Schedule { solve, .. } => solve,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_fill_unset_options() {
        let cfg = RunConfig::resolve(&solve_args(&[]), Defaults::coupling(), 0.1, vec![], None).unwrap();
        assert_eq!(cfg.eps, EpsSpec::Theta(0.0625));
        assert_eq!((cfg.k, cfg.tau, cfg.tau_init), (4, 1e-3, 1e-3));
        assert_eq!(cfg.scales.len(), 7);
        let cfg = RunConfig::resolve(&solve_args(&[]), Defaults::map(), 0.1, vec![], None).unwrap();
        assert_eq!((cfg.eps, cfg.k), (EpsSpec::Scheduler, 16));
    }

    #[test]
    fn eps_rules_are_exclusive_at_parse_time() {
        let argv = ["progot", "schedule", "--theta", "0.1", "--scheduler"];
        assert!(Cli::try_parse_from(argv).is_err());
        let argv = ["progot", "schedule", "--eps", "1,2", "--scheduler"];
        assert!(Cli::try_parse_from(argv).is_err());
    }

    #[test]
    fn rejects_out_of_range_values() {
        for argv in [
            &["--p", "1"][..],
            &["--tau", "0"],
            &["--tau", "1e-2", "--tau-init", "1e-3"],
            &["--theta=-1"],
            &["--beta0", "0"],
            &["--scales", "1,0"],
            &["--max-iter", "0"],
            &["--K", "2", "--eps", "1,2"],
        ] {
            let r = RunConfig::resolve(&solve_args(argv), Defaults::coupling(), 0.1, vec![], None);
            assert!(matches!(r, Err(CliError::Config(_))), "{argv:?}");
        }
        let r = RunConfig::resolve(&solve_args(&[]), Defaults::coupling(), 1.0, vec![], None);
        assert!(r.is_err());
    }

    #[test]
    fn eps_list_length_follows_the_solver() {
        let ok = RunConfig::resolve(
            &solve_args(&["--K", "2", "--eps", "3,2,1"]),
            Defaults::coupling(),
            0.1,
            vec![],
            None,
        );
        assert_eq!(ok.unwrap().eps, EpsSpec::List(vec![3.0, 2.0, 1.0]));
        let ok = RunConfig::resolve(
            &solve_args(&["--solver", "sinkhorn", "--eps", "0.5"]),
            Defaults::coupling(),
            0.1,
            vec![],
            None,
        );
        assert!(ok.is_ok());
        let bad = RunConfig::resolve(
            &solve_args(&["--solver", "both", "--eps", "0.5"]),
            Defaults::coupling(),
            0.1,
            vec![],
            None,
        );
        assert!(bad.is_err());
    }
}
