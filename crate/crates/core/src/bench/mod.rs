//! Synthetic tasks with known ground truth, an exact OT oracle, evaluation
//! metrics and the entropic-map baseline used in map benchmarks.

mod blur;
mod cv;
mod metrics;
mod oracle;
mod tasks;

use std::collections::BTreeMap;

use serde::Serialize;

pub use blur::{blur_task, noise_images, BlurOperator};
pub use cv::{cv_entropic_eps, CvOutcome};
pub use metrics::{
    coupling_metrics, identity_recovery_metrics, mean_squared_error, CouplingMetrics, IdentityMetrics, KL_CLAMP,
};
pub use oracle::{exact_ot_dense, exact_ot_oracle, exact_ot_oracle_with_limit, ORACLE_MAX_ENTRIES};
pub use tasks::{
    affine_ground_truth, affine_map, gaussian_points, gmm_sample, gmm_sample_labeled, psd_cholesky, GaussianComponent,
    GroundTruthTask,
};

/// One benchmark run, ready for JSON export.
///
/// Wall time is optional so that reports can stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub task: String,
    pub solver: String,
    pub seed: u64,
    pub n: usize,
    pub config: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Inner Sinkhorn iterations per step (a single entry for plain Sinkhorn).
    pub iterations: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}
