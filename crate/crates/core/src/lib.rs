//! Progressive entropic optimal transport.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: translation-invariant power costs `h(x - y)`, their
//!   gradients and conjugate gradients, cost matrices and the mean-cost
//!   statistic used to pick default regularizations.
//! - [`sinkhorn`]: a log-domain Sinkhorn solver with warm starts.
//! - [`entropic`]: entropic potentials and maps, barycentric displacements
//!   and the Sinkhorn divergence.
//! - [`progot`]: step/regularization/threshold schedules, the progressive
//!   fitting loop and the out-of-sample progressive map.
//! - [`bench`]: synthetic tasks with known ground truth, the exact OT oracle
//!   and evaluation metrics.
//! - [`io`]: point-cloud files (CSV and the `PCLD` binary format).
//!
//! Every solve is deterministic: parallel reductions split work by rows and
//! reduce each row sequentially, so results do not depend on the thread count.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
mod binio;
pub mod coupling;
pub mod entropic;
mod error;
pub mod geometry;
pub mod io;
pub mod progot;
pub mod sinkhorn;

pub use coupling::Coupling;
pub use entropic::{
    barycentric_displacement, entropic_map_apply, entropic_map_batch, entropic_potential_eval, sinkhorn_divergence,
    DivergenceEps,
};
pub use error::{Error, Result};
pub use geometry::{cost_matrix, default_eps_scale, CostMatrix, CostModel, PointCloud};
pub use progot::{
    alpha_schedule, epsilon_schedule, progot_fit, progot_transport, threshold_schedule, AlphaKind, EpsilonPlan,
    FitOptions, ProgFit, ProgState, ScheduleSet,
};
pub use sinkhorn::{
    dual_objective, marginal_error, sinkhorn_solve, softmin, DualPotentials, SinkhornOptions, SinkhornOutput,
    SinkhornReport,
};
