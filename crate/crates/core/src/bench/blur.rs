use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tasks::GroundTruthTask;
use crate::coupling::Coupling;
use crate::geometry::PointCloud;
use crate::{Error, Result};

/// Separable Gaussian blur `U -> K U K` on `N x N` images with
/// `K_ij = exp(-(i - j)^2 / (sigma N^2))`.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    side: usize,
    sigma: f64,
    kernel: Array2<f64>,
}

impl BlurOperator {
    pub fn new(side: usize, sigma: f64) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidParameter("image side must be positive".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "blur sigma must be positive, got {sigma}"
            )));
        }
        let c = sigma * (side * side) as f64;
        let kernel = Array2::from_shape_fn((side, side), |(i, j)| {
            let d = i as f64 - j as f64;
            (-d * d / c).exp()
        });
        Ok(Self { side, sigma, kernel })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }

    pub fn apply(&self, image: ArrayView2<f64>) -> Array2<f64> {
        self.kernel.dot(&image).dot(&self.kernel)
    }

    /// Blur every row of `images`, each a flattened row-major `N x N` image.
    pub fn apply_flat(&self, images: &Array2<f64>) -> Result<Array2<f64>> {
        let n2 = self.side * self.side;
        if images.ncols() != n2 {
            return Err(Error::DimensionMismatch {
                expected: n2,
                got: images.ncols(),
            });
        }
        let mut out = Array2::<f64>::zeros(images.dim());
        for (src, mut dst) in images.rows().into_iter().zip(out.rows_mut()) {
            let img = src
                .to_shape((self.side, self.side))
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let blurred = self.apply(img.view());
            dst.assign(&ndarray::Array1::from_iter(blurred.iter().copied()));
        }
        Ok(out)
    }

    /// Natural logs of the LDL^T pivots of the kernel, in closed form.
    ///
    /// With `c = sigma N^2` and `q = exp(2/c)`, `K = D M D` where
    /// `D = diag(exp(-i^2/c))` and `M_ij = q^(ij)` is a Vandermonde matrix on
    /// the distinct nodes `q^i`. Its leading minors are Vandermonde
    /// determinants, so pivot `k` of `M` is `prod_{i<k} (q^k - q^i)`. Every log
    /// pivot is finite, which certifies positive-definiteness even when the
    /// kernel is numerically singular.
    pub fn log_pivots(&self) -> Vec<f64> {
        let c = self.sigma * (self.side * self.side) as f64;
        (0..self.side)
            .map(|k| {
                let kf = k as f64;
                let vandermonde: f64 = (0..k)
                    .map(|i| 2.0 * kf / c + (-(-2.0 * (kf - i as f64) / c).exp_m1()).ln())
                    .sum();
                vandermonde - 2.0 * kf * kf / c
            })
            .collect()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.log_pivots().iter().all(|v| v.is_finite())
    }
}

/// `n` images of uniform pixel noise in `[0, 1)`, flattened row-major.
pub fn noise_images(seed: u64, n: usize, side: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, side * side), |_| rng.random::<f64>())
}

/// Images matched to their blurred versions; the optimal coupling is the
/// normalized identity.
pub fn blur_task(images: &Array2<f64>, sigma: f64) -> Result<GroundTruthTask> {
    let n = images.nrows();
    let side = (images.ncols() as f64).sqrt().round() as usize;
    if side * side != images.ncols() {
        return Err(Error::InvalidParameter(format!(
            "{} pixels do not form a square image",
            images.ncols()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two images".into()));
    }
    let op = BlurOperator::new(side, sigma)?;
    for i in 0..n {
        for j in 0..i {
            if images.row(i) == images.row(j) {
                return Err(Error::InvalidParameter(format!("images {j} and {i} are identical")));
            }
        }
    }
    let blurred = op.apply_flat(images)?;
    let source = PointCloud::uniform(images.to_owned())?;
    let target = PointCloud::uniform(blurred)?;
    GroundTruthTask::new(source, target, None, Some(Coupling::identity(n)))
}
