//! Entropic potentials, entropic maps, barycentric displacements and the
//! Sinkhorn divergence.
//!
//! The out-of-sample functions take the *weight-free* target potential
//! `g~ = g - eps log b` (see [`DualPotentials::weight_free_g`]) and weight
//! each target atom by `b_j`, so that at a training point the conditional
//! weights coincide with the normalized row of the Sinkhorn plan.
//!
//! [`DualPotentials::weight_free_g`]: crate::sinkhorn::DualPotentials::weight_free_g

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::coupling::Coupling;
use crate::geometry::{default_eps_scale, CostMatrix, CostModel, PointCloud, ROW_GRAIN};
use crate::sinkhorn::{solve_potentials, SinkhornOptions};
use crate::{Error, Result};

fn check_potential(target: &PointCloud, g: &Array1<f64>, eps: f64) -> Result<()> {
    if g.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: g.len(),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

fn check_point(target: &PointCloud, x: &[f64]) -> Result<()> {
    if x.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Soft c-transform `-eps log sum_j b_j exp((g_j - h(x - y_j)) / eps)`.
pub fn entropic_potential_eval(
    target: &PointCloud,
    g: &Array1<f64>,
    eps: f64,
    model: &CostModel,
    x: &[f64],
) -> Result<f64> {
    check_potential(target, g, eps)?;
    check_point(target, x)?;
    let t: Vec<f64> = (0..target.len())
        .map(|j| target.weights()[j].ln() + (g[j] - model.h_diff(x, target.point(j))) / eps)
        .collect();
    let max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = t.iter().map(|v| (v - max).exp()).sum();
    Ok(-eps * (max + s.ln()))
}

/// Shared kernel of the entropic map: given the costs `h(x - y_j)`, computes
/// `z = grad h*(sum_j p_j grad h(x - y_j))` with `p_j ∝ b_j exp((g_j - c_j)/eps)`.
///
/// `weights` is scratch of length `m`; `acc`/`tmp` hold `d` entries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn displacement_from_costs(
    target: &PointCloud,
    log_b: &[f64],
    g: &[f64],
    eps: f64,
    model: &CostModel,
    x: &[f64],
    costs: &[f64],
    weights: &mut [f64],
    tmp: &mut [f64],
    z: &mut [f64],
) {
    let inv = 1.0 / eps;
    let mut max = f64::NEG_INFINITY;
    for ((w, lb), (gj, cj)) in weights.iter_mut().zip(log_b).zip(g.iter().zip(costs)) {
        *w = lb + (gj - cj) * inv;
        max = max.max(*w);
    }
    let mut total = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    let d = x.len();
    // z first accumulates sum_j p_j grad h(x - y_j)
    z.iter_mut().for_each(|v| *v = 0.0);
    if model.is_sq_euclidean() {
        for (j, w) in weights.iter().enumerate() {
            let p = w / total;
            if p == 0.0 {
                continue;
            }
            for ((zk, xk), yk) in z.iter_mut().zip(x).zip(target.point(j)) {
                *zk += p * (xk - yk);
            }
        }
        // grad h* is the identity
    } else {
        let mut delta = vec![0.0; d];
        for (j, w) in weights.iter().enumerate() {
            let p = w / total;
            if p == 0.0 {
                continue;
            }
            for ((dk, xk), yk) in delta.iter_mut().zip(x).zip(target.point(j)) {
                *dk = xk - yk;
            }
            model.grad_h_into(&delta, tmp);
            for (zk, t) in z.iter_mut().zip(tmp.iter()) {
                *zk += p * t;
            }
        }
        tmp.copy_from_slice(z);
        model.grad_h_conj_into(tmp, z);
    }
}

/// Per-point displacement `z(x)` such that the entropic map is `x - z(x)`.
pub(crate) fn displacement_batch(
    target: &PointCloud,
    g: &Array1<f64>,
    eps: f64,
    model: &CostModel,
    xs: &Array2<f64>,
    costs: Option<&CostMatrix>,
) -> Array2<f64> {
    let (n, d) = xs.dim();
    let m = target.len();
    let log_b: Vec<f64> = target.weights().iter().map(|w| w.ln()).collect();
    let g = g.as_slice().expect("contiguous");
    let xs = xs.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((n, d));
    out.as_slice_mut()
        .expect("fresh array")
        .par_chunks_mut(d)
        .with_min_len(ROW_GRAIN)
        .enumerate()
        .for_each_init(
            || (vec![0.0; m], vec![0.0; m], vec![0.0; d]),
            |(cbuf, wbuf, tmp), (i, z)| {
                let x = &xs[i * d..(i + 1) * d];
                let c: &[f64] = match costs {
                    Some(cm) => cm.row(i, cbuf),
                    None => {
                        for (j, c) in cbuf.iter_mut().enumerate() {
                            *c = model.h_diff(x, target.point(j));
                        }
                        cbuf
                    }
                };
                displacement_from_costs(target, &log_b, g, eps, model, x, c, wbuf, tmp, z);
            },
        );
    out
}

/// Entropic map `x - grad h*(grad f_eps(x))` at a single point.
pub fn entropic_map_apply(
    target: &PointCloud,
    g: &Array1<f64>,
    eps: f64,
    model: &CostModel,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_potential(target, g, eps)?;
    check_point(target, x)?;
    let xs = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
    let z = displacement_batch(target, g, eps, model, &xs, None);
    Ok(x.iter().zip(z.iter()).map(|(a, b)| a - b).collect())
}

/// Entropic map applied to every row of `xs`; each row is independent of the
/// others, so results do not depend on how the batch is split.
pub fn entropic_map_batch(
    target: &PointCloud,
    g: &Array1<f64>,
    eps: f64,
    model: &CostModel,
    xs: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_potential(target, g, eps)?;
    if xs.ncols() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: xs.ncols(),
        });
    }
    let z = displacement_batch(target, g, eps, model, xs, None);
    Ok(xs - &z)
}

/// Row-normalize `P` into a transition kernel `Q` and return
/// `Z_i = grad h*(sum_j Q_ij grad h(x_i - y_j))`.
pub fn barycentric_displacement(
    coupling: &Coupling,
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    model: &CostModel,
) -> Result<Array2<f64>> {
    let p = &coupling.matrix;
    let (n, m) = p.dim();
    if xs.nrows() != n || ys.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: xs.nrows(),
        });
    }
    let d = xs.ncols();
    if ys.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: ys.ncols(),
        });
    }
    let mut z = Array2::<f64>::zeros((n, d));
    let mut delta = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut acc = vec![0.0; d];
    for i in 0..n {
        let row = p.row(i);
        let total: f64 = row.sum();
        if !(total > 0.0) {
            return Err(Error::ZeroRow { row: i });
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (j, pij) in row.iter().enumerate() {
            let q = pij / total;
            if q == 0.0 {
                continue;
            }
            for k in 0..d {
                delta[k] = xs[[i, k]] - ys[[j, k]];
            }
            model.grad_h_into(&delta, &mut grad);
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += q * g;
            }
        }
        model.grad_h_conj_into(&acc, &mut grad);
        for k in 0..d {
            z[[i, k]] = grad[k];
        }
    }
    Ok(z)
}

/// Regularization used inside the Sinkhorn divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceEps {
    /// 5% of the mean intra-target cost.
    Auto,
    Fixed(f64),
}

/// Tolerance shared by the three solves of the divergence.
pub const DIVERGENCE_TAU: f64 = 1e-4;

/// `OT_eps(X, Y) - (OT_eps(X, X) + OT_eps(Y, Y)) / 2`.
pub fn sinkhorn_divergence(x: &PointCloud, y: &PointCloud, model: &CostModel, eps: DivergenceEps) -> Result<f64> {
    sinkhorn_divergence_with(x, y, model, eps, &SinkhornOptions::new(DIVERGENCE_TAU, 100_000))
}

pub fn sinkhorn_divergence_with(
    x: &PointCloud,
    y: &PointCloud,
    model: &CostModel,
    eps: DivergenceEps,
    opts: &SinkhornOptions,
) -> Result<f64> {
    let eps = match eps {
        DivergenceEps::Auto => default_eps_scale(model, y, y)?,
        DivergenceEps::Fixed(e) => e,
    };
    let ot = |u: &PointCloud, v: &PointCloud| -> Result<f64> {
        let cost = CostMatrix::new(model, u, v)?;
        let (_, report) = solve_potentials(&cost, u.weights(), v.weights(), eps, opts, None)?;
        if !report.converged {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                marginal_error: report.marginal_error,
            });
        }
        Ok(report.dual_objective)
    };
    let xy = ot(x, y)?;
    let xx = ot(x, x)?;
    let yy = ot(y, y)?;
    Ok(xy - 0.5 * (xx + yy))
}
