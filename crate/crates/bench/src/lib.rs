//! Fixtures shared by the solver benchmarks.

use ndarray::{Array1, Array2};
use progot::bench::{affine_ground_truth, GroundTruthTask};

/// Gaussian source and its image under `x -> diag(2, 1, ..) x + e_1`.
pub fn affine_task(seed: u64, n: usize, d: usize) -> GroundTruthTask {
    let mut diag = Array1::ones(d);
    diag[0] = 2.0;
    let mut b = Array1::zeros(d);
    b[0] = 1.0;
    affine_ground_truth(seed, n, d, &Array2::from_diag(&diag), &b).expect("valid task")
}
