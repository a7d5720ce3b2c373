use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use progot::entropic::DIVERGENCE_TAU;
use progot::AlphaKind;

#[derive(Debug, Parser)]
#[command(name = "progot", version, about = "Progressive entropic optimal transport")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for a coupling between two clouds and report it with its metrics.
    Couple {
        source: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
        /// Leave the coupling matrix out of the report.
        #[arg(long)]
        omit_coupling: bool,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Fit a progressive map and save it as a PGOT file.
    FitMap {
        source: PathBuf,
        target: PathBuf,
        /// Where to write the fitted map.
        #[arg(long)]
        state: PathBuf,
        /// Fraction of target points held out by the regularization scheduler.
        #[arg(long, default_value_t = 0.1)]
        holdout: f64,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Apply a saved progressive map to a cloud.
    Transport {
        state: PathBuf,
        points: PathBuf,
        /// Also write the mapped cloud to this file (format by extension).
        #[arg(long)]
        cloud_out: Option<PathBuf>,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Sinkhorn divergence between two clouds.
    Divergence {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Regularization; defaults to the mean-cost scale of the second cloud.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = DIVERGENCE_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Print the step, regularization and threshold schedule.
    Schedule {
        /// Source cloud, needed only with --scheduler.
        source: Option<PathBuf>,
        /// Target cloud, needed only with --scheduler.
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        holdout: f64,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Match noise images to their Gaussian-blurred versions.
    BenchBlur {
        #[arg(long, default_value_t = 256)]
        n: usize,
        /// Image side length.
        #[arg(long = "N", default_value_t = 16)]
        side: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [2.0])]
        sigma: Vec<f64>,
        #[command(flatten)]
        solve: SolveArgs,
        /// Include wall-clock times (the report is then no longer reproducible).
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Held-out map error on affine ground-truth tasks, swept over sample sizes.
    BenchMap {
        #[arg(long, value_delimiter = ',', default_values_t = [256, 1024])]
        ns: Vec<usize>,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [MapSolver::Progot, MapSolver::Entropic])]
        solvers: Vec<MapSolver>,
        /// Cross-validation folds for the entropic baseline.
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0.1)]
        holdout: f64,
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        io: IoArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverArg {
    Sinkhorn,
    Progot,
    /// Run both (benchmarks only).
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapSolver {
    Progot,
    /// Entropic map with cross-validated regularization.
    Entropic,
}

impl std::fmt::Display for MapSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MapSolver::Progot => "progot",
            MapSolver::Entropic => "entropic",
        })
    }
}

/// Solver settings shared by the solving subcommands. Unset options take
/// per-command defaults when resolved into a [`crate::RunConfig`].
#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Cost exponent: h(z) = ||z||_p^p / p.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    /// Number of progressive steps before the final one.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, default_value_t = AlphaKind::Constant)]
    pub kind: AlphaKind,
    /// Regularization as a multiple of the mean-cost scale.
    #[arg(long, conflicts_with_all = ["eps", "scheduler"])]
    pub theta: Option<f64>,
    /// Explicit regularizations, one per step.
    #[arg(long, value_delimiter = ',', conflicts_with = "scheduler")]
    pub eps: Option<Vec<f64>>,
    /// Pick regularizations by target self-transport.
    #[arg(long)]
    pub scheduler: bool,
    #[arg(long, default_value_t = 5.0)]
    pub beta0: f64,
    /// Candidate scales for the scheduler [default: 2^-3..2^3].
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Threshold of the first step [default: --tau].
    #[arg(long)]
    pub tau_init: Option<f64>,
    /// Threshold of the last step.
    #[arg(long, default_value_t = 1e-3)]
    pub tau: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_warm_start: bool,
}

#[derive(Debug, Clone, Args)]
pub struct IoArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV inputs carry the point weight in their last column.
    #[arg(long)]
    pub weighted: bool,
    /// Exit with status 3 if any solve fails to converge.
    #[arg(long)]
    pub strict: bool,
}
