use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::coupling::Coupling;
use crate::geometry::PointCloud;
use crate::{Error, Result};

/// Source/target pair with at least one known ground truth.
#[derive(Debug, Clone)]
pub struct GroundTruthTask {
    pub source: PointCloud,
    pub target: PointCloud,
    /// `T0(x_i)` for every source point.
    pub true_map_at_source: Option<Array2<f64>>,
    pub true_coupling: Option<Coupling>,
}

impl GroundTruthTask {
    pub fn new(
        source: PointCloud,
        target: PointCloud,
        true_map_at_source: Option<Array2<f64>>,
        true_coupling: Option<Coupling>,
    ) -> Result<Self> {
        if true_map_at_source.is_none() && true_coupling.is_none() {
            return Err(Error::InvalidParameter("a task needs a ground truth".into()));
        }
        if let Some(map) = &true_map_at_source {
            if map.dim() != source.points().dim() {
                return Err(Error::DimensionMismatch {
                    expected: source.len(),
                    got: map.nrows(),
                });
            }
        }
        if let Some(p) = &true_coupling {
            if p.shape() != (source.len(), target.len()) {
                return Err(Error::DimensionMismatch {
                    expected: source.len(),
                    got: p.shape().0,
                });
            }
            let (r, c) = crate::sinkhorn::marginal_error(&p.matrix, source.weights(), target.weights());
            if r > 1e-9 || c > 1e-9 {
                return Err(Error::InvalidParameter("true coupling is not feasible".into()));
            }
        }
        Ok(Self {
            source,
            target,
            true_map_at_source,
            true_coupling,
        })
    }
}

/// One mixture component.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub weight: f64,
}

/// Lower-triangular `L` with `L L^T = cov`. Positive semi-definite inputs are
/// accepted: a vanishing pivot zeroes its column.
pub fn psd_cholesky(cov: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, m) = cov.dim();
    if n != m {
        return Err(Error::DimensionMismatch { expected: n, got: m });
    }
    let scale = cov
        .diag()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale * n as f64;
    for i in 0..n {
        for j in 0..i {
            if (cov[[i, j]] - cov[[j, i]]).abs() > tol {
                return Err(Error::InvalidParameter("covariance is not symmetric".into()));
            }
        }
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut pivot = cov[[j, j]];
        for k in 0..j {
            pivot -= l[[j, k]] * l[[j, k]];
        }
        if pivot < -tol {
            return Err(Error::InvalidParameter(
                "covariance is not positive semi-definite".into(),
            ));
        }
        if pivot <= tol {
            // the rest of the column must vanish for a PSD matrix
            for i in j + 1..n {
                let mut v = cov[[i, j]];
                for k in 0..j {
                    v -= l[[i, k]] * l[[j, k]];
                }
                if v.abs() > tol.sqrt() * scale.sqrt() {
                    return Err(Error::InvalidParameter(
                        "covariance is not positive semi-definite".into(),
                    ));
                }
            }
            continue;
        }
        let d = pivot.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut v = cov[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / d;
        }
    }
    Ok(l)
}

/// Sample `n` points of a Gaussian mixture with uniform point weights.
pub fn gmm_sample(seed: u64, n: usize, d: usize, components: &[GaussianComponent]) -> Result<PointCloud> {
    let (pts, _) = gmm_sample_labeled(seed, n, d, components)?;
    PointCloud::uniform(pts)
}

/// Like [`gmm_sample`], also returning the component of every point.
pub fn gmm_sample_labeled(
    seed: u64,
    n: usize,
    d: usize,
    components: &[GaussianComponent],
) -> Result<(Array2<f64>, Vec<usize>)> {
    if components.is_empty() || n == 0 || d == 0 {
        return Err(Error::InvalidParameter("empty mixture or sample".into()));
    }
    let weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("component weights must sum to 1".into()));
    }
    let chooser = WeightedIndex::new(&weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let factors = components
        .iter()
        .map(|c| {
            if c.mean.len() != d || c.cov.dim() != (d, d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: c.mean.len(),
                });
            }
            psd_cholesky(&c.cov)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for mut row in pts.rows_mut() {
        let c = chooser.sample(&mut rng);
        let z: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        row.assign(&(&components[c].mean + &factors[c].dot(&z)));
        labels.push(c);
    }
    Ok((pts, labels))
}

/// Standard normal source points.
pub fn gaussian_points(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
}

fn check_spd(a: &Array2<f64>) -> Result<()> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::DimensionMismatch { expected: n, got: m });
    }
    let l = psd_cholesky(a)?;
    if l.diag().iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidParameter("matrix is not positive definite".into()));
    }
    Ok(())
}

/// `x -> A x + b` applied to every row.
pub fn affine_map(a: &Array2<f64>, b: &Array1<f64>, xs: &Array2<f64>) -> Array2<f64> {
    xs.dot(&a.t()) + b
}

/// Gaussian source and its image under the gradient of a convex quadratic,
/// which is the exact squared-Euclidean OT map.
pub fn affine_ground_truth(seed: u64, n: usize, d: usize, a: &Array2<f64>, b: &Array1<f64>) -> Result<GroundTruthTask> {
    if a.dim() != (d, d) || b.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.len(),
        });
    }
    check_spd(a)?;
    let xs = gaussian_points(seed, n, d);
    let ys = affine_map(a, b, &xs);
    let source = PointCloud::uniform(xs)?;
    let target = PointCloud::uniform(ys.clone())?;
    GroundTruthTask::new(source, target, Some(ys), None)
}
