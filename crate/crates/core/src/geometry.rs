//! Ground costs `h(x - y)` with `h(d) = (1/p) * sum_i |d_i|^p`, point clouds
//! and cost matrices.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows per rayon task in row-parallel loops.
pub(crate) const ROW_GRAIN: usize = 16;

/// Default memory budget for a materialized cost matrix (and its transpose).
pub const DEFAULT_COST_BUDGET: usize = 2 << 30;

/// Translation-invariant power cost `h(d) = (1/p) ||d||_p^p`, `p > 1`.
///
/// `p = 2` is the squared-Euclidean cost `h = 1/2 ||.||^2`, for which both
/// gradients are the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    p: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self::sq_euclidean()
    }
}

#[inline]
fn signed_pow(v: f64, e: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(e)
    }
}

impl CostModel {
    pub fn new(p: f64) -> Result<Self> {
        if !p.is_finite() || p <= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "cost exponent must be finite and > 1, got {p}"
            )));
        }
        Ok(Self { p })
    }

    pub fn sq_euclidean() -> Self {
        Self { p: 2.0 }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Hölder conjugate `q = p / (p - 1)`.
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn is_sq_euclidean(&self) -> bool {
        self.p == 2.0
    }

    /// `h(delta)`; no dimension checks.
    #[inline]
    pub fn h(&self, delta: &[f64]) -> f64 {
        if self.is_sq_euclidean() {
            0.5 * delta.iter().map(|d| d * d).sum::<f64>()
        } else {
            delta.iter().map(|d| d.abs().powf(self.p)).sum::<f64>() / self.p
        }
    }

    /// `h(x - y)` without allocating.
    #[inline]
    pub fn h_diff(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.is_sq_euclidean() {
            0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        } else {
            x.iter().zip(y).map(|(a, b)| (a - b).abs().powf(self.p)).sum::<f64>() / self.p
        }
    }

    /// Elementwise `sign(d) |d|^(p-1)`, written into `out`.
    #[inline]
    pub fn grad_h_into(&self, delta: &[f64], out: &mut [f64]) {
        if self.is_sq_euclidean() {
            out.copy_from_slice(delta);
        } else {
            let e = self.p - 1.0;
            for (o, d) in out.iter_mut().zip(delta) {
                *o = signed_pow(*d, e);
            }
        }
    }

    /// Elementwise `sign(v) |v|^(q-1)`, the inverse of [`CostModel::grad_h_into`].
    #[inline]
    pub fn grad_h_conj_into(&self, v: &[f64], out: &mut [f64]) {
        if self.is_sq_euclidean() {
            out.copy_from_slice(v);
        } else {
            let e = self.q() - 1.0;
            for (o, x) in out.iter_mut().zip(v) {
                *o = signed_pow(*x, e);
            }
        }
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} has non-finite entries")))
    }
}

/// `h(x - y)`.
pub fn cost(model: &CostModel, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x.len(), y.len())?;
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    Ok(model.h_diff(x, y))
}

/// `grad h(delta)`.
pub fn grad_h(model: &CostModel, delta: &[f64]) -> Result<Vec<f64>> {
    check_finite(delta, "delta")?;
    let mut out = vec![0.0; delta.len()];
    model.grad_h_into(delta, &mut out);
    Ok(out)
}

/// `grad h*(v)`.
pub fn grad_h_conj(model: &CostModel, v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v, "v")?;
    let mut out = vec![0.0; v.len()];
    model.grad_h_conj_into(v, &mut out);
    Ok(out)
}

/// A weighted point cloud `sum_i w_i delta_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    weights: Array1<f64>,
}

/// Tolerance on `|sum(weights) - 1|` accepted by [`PointCloud::new`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

impl PointCloud {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidCloud(format!("empty cloud ({n} x {d})")));
        }
        if weights.len() != n {
            return Err(Error::InvalidCloud(format!("{} weights for {n} points", weights.len())));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCloud("non-finite coordinate".into()));
        }
        if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::InvalidCloud("weights must be positive and finite".into()));
        }
        let total: f64 = weights.sum();
        // summation error grows with n
        if (total - 1.0).abs() > WEIGHT_SUM_TOL + n as f64 * f64::EPSILON {
            return Err(Error::InvalidCloud(format!("weights sum to {total}, not 1")));
        }
        let points = if points.is_standard_layout() {
            points
        } else {
            points.as_standard_layout().into_owned()
        };
        Ok(Self { points, weights })
    }

    /// Cloud with uniform weights `1/n`.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        let w = Array1::from_elem(n, 1.0 / n.max(1) as f64);
        Self::new(points, w)
    }

    /// Same weights, new locations (e.g. after a displacement step).
    pub fn with_points(&self, points: Array2<f64>) -> Result<Self> {
        Self::new(points, self.weights.clone())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            check_dims(d, r.len())?;
            flat.extend_from_slice(r);
        }
        let pts = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::InvalidCloud(e.to_string()))?;
        Self::uniform(pts)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn weights_slice(&self) -> &[f64] {
        self.weights.as_slice().expect("weights are contiguous")
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|w| *w == w0)
    }

    /// Largest distance of a point to the weighted mean.
    pub fn radius(&self) -> f64 {
        let mean = self.points.t().dot(&self.weights);
        self.points
            .axis_iter(Axis(0))
            .map(|r| dist(r, mean.view()))
            .fold(0.0, f64::max)
    }
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Dense `C_ij = h(x_i - y_j)`.
pub fn cost_matrix(model: &CostModel, x: &PointCloud, y: &PointCloud) -> Result<Array2<f64>> {
    check_dims(x.dim(), y.dim())?;
    let (n, m) = (x.len(), y.len());
    let mut c = Array2::<f64>::zeros((n, m));
    c.as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(m)
        .with_min_len(ROW_GRAIN)
        .enumerate()
        .for_each(|(i, row)| {
            let xi = x.point(i);
            for (j, c) in row.iter_mut().enumerate() {
                *c = model.h_diff(xi, y.point(j));
            }
        });
    Ok(c)
}

/// Unweighted mean of the cost matrix, accumulated row by row in a fixed order.
pub fn mean_cost(model: &CostModel, x: &PointCloud, y: &PointCloud) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    let row_sums: Vec<f64> = (0..x.len())
        .into_par_iter()
        .with_min_len(ROW_GRAIN)
        .map(|i| {
            let xi = x.point(i);
            (0..y.len()).map(|j| model.h_diff(xi, y.point(j))).sum::<f64>()
        })
        .collect();
    Ok(row_sums.iter().sum::<f64>() / (x.len() * y.len()) as f64)
}

/// One-twentieth of the unweighted mean cost between `x` and `y`.
pub fn default_eps_scale(model: &CostModel, x: &PointCloud, y: &PointCloud) -> Result<f64> {
    let scale = mean_cost(model, x, y)? / 20.0;
    if scale > 0.0 && scale.is_finite() {
        Ok(scale)
    } else {
        Err(Error::DegenerateCost)
    }
}

/// Cost matrix used by the solvers: materialized (with its transpose) when it
/// fits the memory budget, otherwise recomputed row by row on demand.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    storage: Storage,
}

#[derive(Debug, Clone)]
enum Storage {
    Dense {
        c: Array2<f64>,
        ct: Array2<f64>,
    },
    OnDemand {
        x: PointCloud,
        y: PointCloud,
        model: CostModel,
    },
}

impl CostMatrix {
    pub fn new(model: &CostModel, x: &PointCloud, y: &PointCloud) -> Result<Self> {
        Self::with_budget(model, x, y, DEFAULT_COST_BUDGET)
    }

    /// `budget` bounds the bytes spent on the dense matrix and its transpose.
    pub fn with_budget(model: &CostModel, x: &PointCloud, y: &PointCloud, budget: usize) -> Result<Self> {
        check_dims(x.dim(), y.dim())?;
        let (rows, cols) = (x.len(), y.len());
        let bytes = rows.saturating_mul(cols).saturating_mul(2 * std::mem::size_of::<f64>());
        let storage = if bytes <= budget {
            let c = cost_matrix(model, x, y)?;
            let ct = c.t().as_standard_layout().into_owned();
            Storage::Dense { c, ct }
        } else {
            Storage::OnDemand {
                x: x.clone(),
                y: y.clone(),
                model: *model,
            }
        };
        Ok(Self { rows, cols, storage })
    }

    /// Wrap an explicit matrix (e.g. a precomputed or synthetic cost).
    pub fn from_dense(c: Array2<f64>) -> Result<Self> {
        if !c.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("cost matrix has non-finite entries".into()));
        }
        let (rows, cols) = c.dim();
        let c = c.as_standard_layout().into_owned();
        let ct = c.t().as_standard_layout().into_owned();
        Ok(Self {
            rows,
            cols,
            storage: Storage::Dense { c, ct },
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    /// Row `i`; `scratch` must hold `cols` entries and is used only on demand.
    #[inline]
    pub fn row<'a>(&'a self, i: usize, scratch: &'a mut [f64]) -> &'a [f64] {
        match &self.storage {
            Storage::Dense { c, .. } => &c.as_slice().expect("standard layout")[i * self.cols..(i + 1) * self.cols],
            Storage::OnDemand { x, y, model } => {
                let xi = x.point(i);
                for (j, s) in scratch[..self.cols].iter_mut().enumerate() {
                    *s = model.h_diff(xi, y.point(j));
                }
                &scratch[..self.cols]
            }
        }
    }

    /// Column `j` as a contiguous slice; `scratch` must hold `rows` entries.
    #[inline]
    pub fn col<'a>(&'a self, j: usize, scratch: &'a mut [f64]) -> &'a [f64] {
        match &self.storage {
            Storage::Dense { ct, .. } => &ct.as_slice().expect("standard layout")[j * self.rows..(j + 1) * self.rows],
            Storage::OnDemand { x, y, model } => {
                let yj = y.point(j);
                for (i, s) in scratch[..self.rows].iter_mut().enumerate() {
                    *s = model.h_diff(x.point(i), yj);
                }
                &scratch[..self.rows]
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match &self.storage {
            Storage::Dense { c, .. } => c.clone(),
            Storage::OnDemand { .. } => {
                let mut out = Array2::zeros((self.rows, self.cols));
                let mut scratch = vec![0.0; self.cols];
                for i in 0..self.rows {
                    out.row_mut(i)
                        .iter_mut()
                        .zip(self.row(i, &mut scratch))
                        .for_each(|(o, v)| *o = *v);
                }
                out
            }
        }
    }
}
