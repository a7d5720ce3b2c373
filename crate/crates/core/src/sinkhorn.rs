//! Log-domain Sinkhorn iterations.
//!
//! Potentials follow the convention in which the weights are absorbed into
//! the updates: the plan is `P_ij = exp((f_i + g_j - C_ij) / eps)` and
//!
//! ```text
//! f <- f + eps * log a - eps * log(P 1)
//! g <- g + eps * log b - eps * log(P^T 1)
//! ```
//!
//! Each update is a log-sum-exp per row (or column). On dense costs it is
//! evaluated through a cached Gibbs kernel at reference potentials; rows
//! that would underflow there, and all rows of on-demand
//! costs, use a max-shifted log-sum-exp, so nothing over- or underflows no
//! matter how small `eps` is.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::Coupling;
use crate::geometry::{CostMatrix, CostModel, PointCloud, ROW_GRAIN};
use crate::{Error, Result};

/// Smallest admissible `eps` relative to the mean-cost scale.
pub const EPS_FLOOR_RATIO: f64 = 1e-6;

/// Soft minimum `-eps * log(sum_j exp(-row_j / eps))`.
pub fn softmin(eps: f64, row: &[f64]) -> f64 {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return min;
    }
    let s: f64 = row.iter().map(|v| (-(v - min) / eps).exp()).sum();
    min - eps * s.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Stopping threshold on the L1 row-marginal error.
    pub tau: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            max_iter: 100_000,
        }
    }
}

impl SinkhornOptions {
    pub fn new(tau: f64, max_iter: usize) -> Self {
        Self { tau, max_iter }
    }
}

/// Dual pair `(f, g)` at regularization `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub eps: f64,
}

impl DualPotentials {
    /// Dense plan `exp((f_i + g_j - C_ij) / eps)`.
    pub fn coupling_matrix(&self, cost: &CostMatrix) -> Array2<f64> {
        let (n, m) = (cost.rows(), cost.cols());
        let mut out = Array2::<f64>::zeros((n, m));
        let inv = 1.0 / self.eps;
        let g = self.g.as_slice().expect("contiguous");
        out.as_slice_mut()
            .expect("fresh array")
            .par_chunks_mut(m)
            .with_min_len(ROW_GRAIN)
            .enumerate()
            .for_each_init(
                || vec![0.0; m],
                |scratch, (i, row)| {
                    let c = cost.row(i, scratch);
                    let fi = self.f[i];
                    for ((p, cij), gj) in row.iter_mut().zip(c).zip(g) {
                        *p = ((fi + gj - cij) * inv).exp();
                    }
                },
            );
        out
    }

    /// Target potential with the weights taken out, `g - eps * log b`.
    ///
    /// This is the form expected by the entropic potential and map, which
    /// re-insert `b` as explicit conditional weights.
    pub fn weight_free_g(&self, b: &Array1<f64>) -> Array1<f64> {
        &self.g - &b.mapv(|w| self.eps * w.ln())
    }

    /// Source potential with the weights taken out, `f - eps * log a`.
    pub fn weight_free_f(&self, a: &Array1<f64>) -> Array1<f64> {
        &self.f - &a.mapv(|w| self.eps * w.ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornReport {
    /// Number of completed `(f, g)` update pairs.
    pub iterations: usize,
    /// L1 deviation of the row marginal from `a` (the stopping statistic).
    pub marginal_error: f64,
    /// L1 deviation of the column marginal from `b`.
    pub col_marginal_error: f64,
    pub converged: bool,
    pub dual_objective: f64,
    /// Total mass of the induced plan.
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    pub potentials: DualPotentials,
    pub coupling: Coupling,
    pub report: SinkhornReport,
}

/// L1 row and column marginal deviations of a plan.
pub fn marginal_error(p: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> (f64, f64) {
    let rows = p.rows().into_iter().zip(a).map(|(r, ai)| (r.sum() - ai).abs()).sum();
    let cols = p.columns().into_iter().zip(b).map(|(c, bj)| (c.sum() - bj).abs()).sum();
    (rows, cols)
}

/// Entropic OT value `<f~, a> + <g~, b> - eps * (mass - 1)`, evaluated on the
/// weight-free potentials `f~ = f - eps log a`, `g~ = g - eps log b`.
///
/// At convergence this equals the primal value `<P, C> + eps * KL(P || a b^T)`.
pub fn dual_objective(pot: &DualPotentials, a: &Array1<f64>, b: &Array1<f64>, mass: f64) -> f64 {
    let eps = pot.eps;
    let fa: f64 = pot.f.iter().zip(a).map(|(f, w)| w * (f - eps * w.ln())).sum();
    let gb: f64 = pot.g.iter().zip(b).map(|(g, w)| w * (g - eps * w.ln())).sum();
    fa + gb - eps * (mass - 1.0)
}

/// Solve entropic OT between two weighted clouds.
///
/// `init` warm-starts `(f, g)`; zeros otherwise.
pub fn sinkhorn_solve(
    source: &PointCloud,
    target: &PointCloud,
    model: &CostModel,
    eps: f64,
    opts: &SinkhornOptions,
    init: Option<(&Array1<f64>, &Array1<f64>)>,
) -> Result<SinkhornOutput> {
    let cost = CostMatrix::new(model, source, target)?;
    sinkhorn_solve_cost(&cost, source.weights(), target.weights(), eps, opts, init)
}

/// [`sinkhorn_solve`] on a prepared cost matrix.
pub fn sinkhorn_solve_cost(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    opts: &SinkhornOptions,
    init: Option<(&Array1<f64>, &Array1<f64>)>,
) -> Result<SinkhornOutput> {
    let (potentials, report) = solve_potentials(cost, a, b, eps, opts, init)?;
    let matrix = potentials.coupling_matrix(cost);
    let coupling = Coupling {
        matrix,
        row_weights: a.clone(),
        col_weights: b.clone(),
    };
    Ok(SinkhornOutput {
        potentials,
        coupling,
        report,
    })
}

fn validate(cost: &CostMatrix, a: &Array1<f64>, b: &Array1<f64>, eps: f64, opts: &SinkhornOptions) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if !(opts.tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {}",
            opts.tau
        )));
    }
    if a.len() != cost.rows() {
        return Err(Error::DimensionMismatch {
            expected: cost.rows(),
            got: a.len(),
        });
    }
    if b.len() != cost.cols() {
        return Err(Error::DimensionMismatch {
            expected: cost.cols(),
            got: b.len(),
        });
    }
    let scale = mean_of(cost) / 20.0;
    if scale > 0.0 && eps < EPS_FLOOR_RATIO * scale {
        return Err(Error::InvalidParameter(format!(
            "eps = {eps:e} is below {EPS_FLOOR_RATIO:e} x the mean-cost scale {scale:e}"
        )));
    }
    Ok(())
}

fn mean_of(cost: &CostMatrix) -> f64 {
    let m = cost.cols();
    let sums: Vec<f64> = (0..cost.rows())
        .into_par_iter()
        .with_min_len(ROW_GRAIN)
        .map_init(|| vec![0.0; m], |s, i| cost.row(i, s).iter().sum::<f64>())
        .collect();
    sums.iter().sum::<f64>() / (cost.rows() * cost.cols()) as f64
}

/// Largest drift `|f - fbar| / eps` tolerated before the kernel is rebuilt.
const ABSORB_LIMIT: f64 = 40.0;
/// Kernel sums below this are recomputed with an exact log-sum-exp.
const KERNEL_SUM_FLOOR: f64 = 1e-250;
/// Rows per block of a streaming kernel pass; fixed so that the column
/// accumulation order does not depend on the thread count.
const STREAM_BLOCK: usize = 64;

/// Gibbs kernel `exp((fbar_i + gbar_j - C_ij) / eps)` at reference potentials.
///
/// A log-domain update then reads `f_i = eps log a_i + fbar_i - eps log s_i`
/// with `s_i = sum_j K_ij exp((g_j - gbar_j) / eps)`, one multiply-add per
/// entry instead of one `exp`. The reference potentials move to the current
/// ones whenever the drift exceeds [`ABSORB_LIMIT`], and any row or column
/// whose kernel sum falls below [`KERNEL_SUM_FLOOR`] is evaluated with the
/// max-shifted log-sum-exp, so no result rests on an underflowed entry.
struct Kernel {
    k: Array2<f64>,
    fbar: Vec<f64>,
    gbar: Vec<f64>,
}

impl Kernel {
    fn build(cost: &CostMatrix, f: &[f64], g: &[f64], inv_eps: f64) -> Self {
        let (n, m) = (cost.rows(), cost.cols());
        let mut k = Array2::zeros((n, m));
        k.as_slice_mut()
            .expect("fresh array")
            .par_chunks_mut(m)
            .with_min_len(ROW_GRAIN)
            .enumerate()
            .for_each_init(
                || vec![0.0; m],
                |scratch, (i, dst)| {
                    let fi = f[i];
                    for ((o, cij), gj) in dst.iter_mut().zip(cost.row(i, scratch)).zip(g) {
                        *o = ((fi + gj - cij) * inv_eps).exp();
                    }
                },
            );
        Self {
            k,
            fbar: f.to_vec(),
            gbar: g.to_vec(),
        }
    }

    fn within(bar: &[f64], cur: &[f64], inv_eps: f64) -> bool {
        bar.iter()
            .zip(cur)
            .all(|(b, c)| ((c - b) * inv_eps).abs() <= ABSORB_LIMIT)
    }

    /// Row sums `s = K v` and, from the per-row scalings `u_i = scale(i, s_i)`,
    /// the column sums `K^T u`, in a single read of the kernel.
    fn stream<F>(&self, v: &[f64], scale: F) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(usize, f64) -> f64 + Sync,
    {
        let m = self.k.ncols();
        let parts: Vec<(Vec<f64>, Vec<f64>)> = self
            .k
            .as_slice()
            .expect("standard layout")
            .par_chunks(STREAM_BLOCK * m)
            .enumerate()
            .map(|(blk, rows)| {
                let mut s = Vec::with_capacity(STREAM_BLOCK);
                let mut t = vec![0.0; m];
                for (r, row) in rows.chunks(m).enumerate() {
                    let si = dot(row, v);
                    let ui = scale(blk * STREAM_BLOCK + r, si);
                    if ui != 0.0 {
                        for (tj, kij) in t.iter_mut().zip(row) {
                            *tj += ui * kij;
                        }
                    }
                    s.push(si);
                }
                (s, t)
            })
            .collect();
        let mut s = Vec::with_capacity(self.k.nrows());
        let mut t = vec![0.0; m];
        for (ps, pt) in parts {
            s.extend(ps);
            for (a, b) in t.iter_mut().zip(pt) {
                *a += b;
            }
        }
        (s, t)
    }
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn line<'a>(cost: &'a CostMatrix, transposed: bool, i: usize, scratch: &'a mut [f64]) -> &'a [f64] {
    if transposed {
        cost.col(i, scratch)
    } else {
        cost.row(i, scratch)
    }
}

/// For every row (or column) `i` a pair `(shift, s)` with
/// `log sum_j exp((pot_j - C_ij) / eps) = shift / eps + log s`.
fn lse_reductions(cost: &CostMatrix, transposed: bool, pot: &[f64], inv_eps: f64) -> Vec<(f64, f64)> {
    let (len, width) = if transposed {
        (cost.cols(), cost.rows())
    } else {
        (cost.rows(), cost.cols())
    };
    (0..len)
        .into_par_iter()
        .with_min_len(ROW_GRAIN)
        .map_init(
            || vec![0.0; width],
            |s, i| shifted_lse(line(cost, transposed, i, s), pot, inv_eps),
        )
        .collect()
}

/// Turn kernel sums into `(shift, s)` pairs, recomputing the unsafe ones.
fn checked_sums(
    sums: Vec<f64>,
    bar: &[f64],
    cost: &CostMatrix,
    transposed: bool,
    pot: &[f64],
    inv_eps: f64,
) -> Vec<(f64, f64)> {
    let width = if transposed { cost.rows() } else { cost.cols() };
    let mut scratch = vec![0.0; width];
    sums.into_iter()
        .zip(bar)
        .enumerate()
        .map(|(i, (s, b))| {
            if usable(s) {
                (-b, s)
            } else {
                shifted_lse(line(cost, transposed, i, &mut scratch), pot, inv_eps)
            }
        })
        .collect()
}

#[inline]
fn usable(kernel_sum: f64) -> bool {
    kernel_sum >= KERNEL_SUM_FLOOR && kernel_sum.is_finite()
}

#[inline]
fn shifted_lse(c: &[f64], pot: &[f64], inv_eps: f64) -> (f64, f64) {
    let mut max = f64::NEG_INFINITY;
    for (cij, p) in c.iter().zip(pot) {
        max = max.max(p - cij);
    }
    let mut s = 0.0;
    for (cij, p) in c.iter().zip(pot) {
        s += ((p - cij - max) * inv_eps).exp();
    }
    (max, s)
}

#[inline]
fn updated(eps: f64, log_w: f64, (shift, s): (f64, f64)) -> f64 {
    eps * (log_w - s.ln()) - shift
}

pub(crate) fn solve_potentials(
    cost: &CostMatrix,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    opts: &SinkhornOptions,
    init: Option<(&Array1<f64>, &Array1<f64>)>,
) -> Result<(DualPotentials, SinkhornReport)> {
    validate(cost, a, b, eps, opts)?;
    let (n, m) = (cost.rows(), cost.cols());
    let (mut f, mut g) = match init {
        Some((f0, g0)) => {
            if f0.len() != n || g0.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: n + m,
                    got: f0.len() + g0.len(),
                });
            }
            (f0.to_vec(), g0.to_vec())
        }
        None => (vec![0.0; n], vec![0.0; m]),
    };
    let log_a: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|w| w.ln()).collect();
    let inv_eps = 1.0 / eps;
    let mut kernel: Option<Kernel> = None;

    let mut iterations = 0;
    #[cfg(debug_assertions)]
    let mut last_dual = f64::NEG_INFINITY;
    let (row_error, mass, converged) = loop {
        if cost.is_dense()
            && !kernel
                .as_ref()
                .is_some_and(|k| Kernel::within(&k.fbar, &f, inv_eps) && Kernel::within(&k.gbar, &g, inv_eps))
        {
            kernel = Some(Kernel::build(cost, &f, &g, inv_eps));
        }

        // Row sums at the current (f, g); with a kernel, the same pass also
        // accumulates the column sums needed after the f-update.
        let (rows, col_sums) = match &kernel {
            Some(k) => {
                let v: Vec<f64> = g
                    .iter()
                    .zip(&k.gbar)
                    .map(|(gj, b)| ((gj - b) * inv_eps).exp())
                    .collect();
                let (s, t) = k.stream(&v, |i, si| if usable(si) { a[i] / si } else { 0.0 });
                let t = s.iter().all(|si| usable(*si)).then_some(t);
                (checked_sums(s, &k.fbar, cost, false, &g, inv_eps), t)
            }
            None => (lse_reductions(cost, false, &g, inv_eps), None),
        };

        let mut err = 0.0;
        let mut mass = 0.0;
        for ((fi, (mx, s)), ai) in f.iter().zip(&rows).zip(a) {
            let ri = (((fi + mx) * inv_eps) + s.ln()).exp();
            err += (ri - ai).abs();
            mass += ri;
        }
        if !err.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite marginal error after {iterations} iterations"
            )));
        }
        #[cfg(debug_assertions)]
        if iterations % 10 == 0 {
            let pot = DualPotentials {
                f: Array1::from(f.clone()),
                g: Array1::from(g.clone()),
                eps,
            };
            let dual = dual_objective(&pot, a, b, mass);
            debug_assert!(
                dual >= last_dual - 1e-9 * (1.0 + dual.abs()),
                "dual objective decreased: {last_dual} -> {dual}"
            );
            last_dual = dual;
        }
        if err <= opts.tau {
            break (err, mass, true);
        }
        if iterations >= opts.max_iter {
            break (err, mass, false);
        }
        for ((fi, r), la) in f.iter_mut().zip(&rows).zip(&log_a) {
            *fi = updated(eps, *la, *r);
        }

        // The streamed column sums are exact only if every row took the
        // kernel path and the new f stays close to the reference.
        let cols = match (&kernel, col_sums) {
            (Some(k), Some(t)) if Kernel::within(&k.fbar, &f, inv_eps) => {
                checked_sums(t, &k.gbar, cost, true, &f, inv_eps)
            }
            _ => lse_reductions(cost, true, &f, inv_eps),
        };
        for ((gj, c), lb) in g.iter_mut().zip(&cols).zip(&log_b) {
            *gj = updated(eps, *lb, *c);
        }
        iterations += 1;
    };

    let cols = match &kernel {
        Some(k) if Kernel::within(&k.fbar, &f, inv_eps) && Kernel::within(&k.gbar, &g, inv_eps) => {
            let v = vec![0.0; m];
            let u: Vec<f64> = f
                .iter()
                .zip(&k.fbar)
                .map(|(fi, b)| ((fi - b) * inv_eps).exp())
                .collect();
            let (_, t) = k.stream(&v, |i, _| u[i]);
            checked_sums(t, &k.gbar, cost, true, &f, inv_eps)
        }
        _ => lse_reductions(cost, true, &f, inv_eps),
    };
    let col_error = g
        .iter()
        .zip(&cols)
        .zip(b)
        .map(|((gj, (mx, s)), bj)| ((((gj + mx) * inv_eps) + s.ln()).exp() - bj).abs())
        .sum();

    let potentials = DualPotentials {
        f: Array1::from(f),
        g: Array1::from(g),
        eps,
    };
    if !potentials.f.iter().chain(&potentials.g).all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite potentials".into()));
    }
    let dual = dual_objective(&potentials, a, b, mass);
    let report = SinkhornReport {
        iterations,
        marginal_error: row_error,
        col_marginal_error: col_error,
        converged,
        dual_objective: dual,
        mass,
    };
    Ok((potentials, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cost_matrix, default_eps_scale};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud1d(v: &[f64]) -> PointCloud {
        PointCloud::from_rows(&v.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, weighted: bool) -> PointCloud {
        let pts = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        if weighted {
            let w: Array1<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
            let w = &w / w.sum();
            // renormalize again so the sum is within the cloud tolerance
            let total = w.sum();
            PointCloud::new(pts, w.mapv(|v| v / total)).unwrap()
        } else {
            PointCloud::uniform(pts).unwrap()
        }
    }

    fn tight() -> SinkhornOptions {
        SinkhornOptions::new(1e-12, 100_000)
    }

    #[test]
    fn softmin_examples() {
        assert_abs_diff_eq!(softmin(1.0, &[0.0, 0.0]), -(2f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(softmin(0.01, &[0.0, 10.0]), 0.0, epsilon = 1e-9);
        assert_eq!(softmin(1.0, &[5.0]), 5.0);
    }

    proptest! {
        #[test]
        fn softmin_bounds(eps in 1e-3f64..10.0, row in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let s = softmin(eps, &row);
            prop_assert!(s <= min + 1e-12);
            prop_assert!(s >= min - eps * (row.len() as f64).ln() - 1e-12);
        }
    }

    #[test]
    fn single_point_coupling() {
        let x = cloud1d(&[0.3]);
        let y = cloud1d(&[2.0]);
        let sq = CostModel::sq_euclidean();
        for eps in [0.01, 1.0, 100.0] {
            let out = sinkhorn_solve(&x, &y, &sq, eps, &tight(), None).unwrap();
            assert_abs_diff_eq!(out.coupling.matrix[[0, 0]], 1.0, epsilon = 1e-12);
            let pot = &out.potentials;
            assert_abs_diff_eq!(pot.f[0] + pot.g[0], 0.5 * 1.7 * 1.7, epsilon = 1e-12);
            assert_abs_diff_eq!(out.report.dual_objective, 0.5 * 1.7 * 1.7, epsilon = 1e-12);
        }
        let same = sinkhorn_solve(&x, &x, &sq, 1.0, &tight(), None).unwrap();
        assert_abs_diff_eq!(same.report.dual_objective, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn large_eps_gives_product_coupling() {
        let x = cloud1d(&[0.0, 1.0]);
        let out = sinkhorn_solve(&x, &x, &CostModel::sq_euclidean(), 1e6, &tight(), None).unwrap();
        for v in out.coupling.matrix.iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-6);
        }
    }

    #[test]
    fn small_eps_gives_identity_assignment() {
        let x = cloud1d(&[0.0, 1.0]);
        let out = sinkhorn_solve(&x, &x, &CostModel::sq_euclidean(), 1e-3, &tight(), None).unwrap();
        let expect = array![[0.5, 0.0], [0.0, 0.5]];
        for (v, e) in out.coupling.matrix.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(*v, *e, epsilon = 1e-6);
        }
    }

    /// Plain (non-log) Sinkhorn scaling `u = a / K v`, `v = b / K^T u`.
    fn naive_scaling(c: &Array2<f64>, a: &[f64], b: &[f64], eps: f64, iters: usize) -> Array2<f64> {
        let k = c.mapv(|v| (-v / eps).exp());
        let (n, m) = c.dim();
        let mut u = vec![1.0; n];
        let mut v = vec![1.0; m];
        for _ in 0..iters {
            for i in 0..n {
                u[i] = a[i] / (0..m).map(|j| k[[i, j]] * v[j]).sum::<f64>();
            }
            for j in 0..m {
                v[j] = b[j] / (0..n).map(|i| k[[i, j]] * u[i]).sum::<f64>();
            }
        }
        Array2::from_shape_fn((n, m), |(i, j)| u[i] * k[[i, j]] * v[j])
    }

    fn three_by_three() -> (PointCloud, PointCloud) {
        (cloud1d(&[0.0, 1.0, 4.0]), cloud1d(&[0.0, 2.0, 5.0]))
    }

    #[test]
    fn matches_naive_scaling_iterates() {
        let (x, y) = three_by_three();
        let sq = CostModel::sq_euclidean();
        let c = cost_matrix(&sq, &x, &y).unwrap();
        let w = [1.0 / 3.0; 3];
        for iters in [1, 10, 1000, 20_000] {
            let opts = SinkhornOptions::new(1e-300, iters);
            let out = sinkhorn_solve(&x, &y, &sq, 0.1, &opts, None).unwrap();
            assert_eq!(out.report.iterations, iters);
            let oracle = naive_scaling(&c, &w, &w, 0.1, iters);
            for (p, q) in out.coupling.matrix.iter().zip(oracle.iter()) {
                assert_abs_diff_eq!(*p, *q, epsilon = 1e-10);
            }
        }
    }

    /// Converged plan for the 3x3 instance, from a 60-digit Newton solve of
    /// the dual.
    const THREE_BY_THREE_PLAN: [[f64; 3]; 3] = [
        [0.3333182007104325, 1.513262290081146e-5, 4.053572315937892e-38],
        [1.513262290081146e-5, 0.3333182007104325, 9.541512012301978e-21],
        [3.793180140947508e-51, 9.541512012301978e-21, 0.3333333333333333],
    ];
    const THREE_BY_THREE_PRIMAL: f64 = 0.4431915356068632;

    #[test]
    fn three_by_three_approaches_exact_solution() {
        // Two near-zero flows make this instance converge very slowly; the
        // plan is only checked to the accuracy reachable within max_iter.
        let (x, y) = three_by_three();
        let sq = CostModel::sq_euclidean();
        let out = sinkhorn_solve(&x, &y, &sq, 0.1, &SinkhornOptions::new(1e-5, 100_000), None).unwrap();
        assert!(out.report.converged);
        let l1: f64 = out
            .coupling
            .matrix
            .iter()
            .zip(THREE_BY_THREE_PLAN.iter().flatten())
            .map(|(p, q)| (p - q).abs())
            .sum();
        assert!(l1 < 2e-5, "L1 distance to exact plan {l1}");
        assert_abs_diff_eq!(out.report.dual_objective, THREE_BY_THREE_PRIMAL, epsilon = 1e-5);
    }

    fn primal_value(p: &Array2<f64>, c: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, eps: f64) -> f64 {
        let mut v = 0.0;
        for ((i, j), pij) in p.indexed_iter() {
            v += pij * c[[i, j]];
            if *pij > 0.0 {
                v += eps * pij * (pij / (a[i] * b[j])).ln();
            }
        }
        v
    }

    #[test]
    fn primal_dual_consistency_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let models = [CostModel::sq_euclidean(), CostModel::new(1.5).unwrap()];
        for trial in 0..12 {
            let model = models[trial % 2];
            let x = random_cloud(&mut rng, 4 + trial % 5, 2, trial % 3 == 0);
            let y = random_cloud(&mut rng, 3 + trial % 4, 2, trial % 2 == 0);
            let eps = default_eps_scale(&model, &x, &y).unwrap() * rng.random_range(0.5..5.0);
            let out = sinkhorn_solve(&x, &y, &model, eps, &SinkhornOptions::new(1e-11, 100_000), None).unwrap();
            assert!(out.report.converged);
            let c = cost_matrix(&model, &x, &y).unwrap();
            let primal = primal_value(&out.coupling.matrix, &c, x.weights(), y.weights(), eps);
            assert!(
                (out.report.dual_objective - primal).abs() <= 1e-6,
                "dual {} primal {}",
                out.report.dual_objective,
                primal
            );
        }
    }

    #[test]
    fn column_marginal_exact_after_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_cloud(&mut rng, 9, 3, true);
        let y = random_cloud(&mut rng, 6, 3, true);
        let sq = CostModel::sq_euclidean();
        for iters in [1, 3, 10] {
            let out = sinkhorn_solve(&x, &y, &sq, 0.05, &SinkhornOptions::new(1e-300, iters), None).unwrap();
            let (_, col) = marginal_error(&out.coupling.matrix, x.weights(), y.weights());
            assert!(col <= 1e-12, "column error {col}");
            assert!(out.report.col_marginal_error <= 1e-12);
        }
    }

    #[test]
    fn gauge_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_cloud(&mut rng, 7, 2, false);
        let y = random_cloud(&mut rng, 5, 2, true);
        let sq = CostModel::sq_euclidean();
        let cost = CostMatrix::new(&sq, &x, &y).unwrap();
        let out = sinkhorn_solve(&x, &y, &sq, 0.1, &tight(), None).unwrap();
        let shifted = DualPotentials {
            f: &out.potentials.f + 3.25,
            g: &out.potentials.g - 3.25,
            eps: 0.1,
        };
        let p = shifted.coupling_matrix(&cost);
        for (u, v) in p.iter().zip(out.coupling.matrix.iter()) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn warm_start_from_optimum_is_immediate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_cloud(&mut rng, 12, 2, false);
        let y = random_cloud(&mut rng, 10, 2, false);
        let sq = CostModel::sq_euclidean();
        let opts = SinkhornOptions::new(1e-9, 100_000);
        let cold = sinkhorn_solve(&x, &y, &sq, 0.02, &opts, None).unwrap();
        assert!(cold.report.iterations > 2);
        let p = &cold.potentials;
        let warm = sinkhorn_solve(&x, &y, &sq, 0.02, &opts, Some((&p.f, &p.g))).unwrap();
        assert!(warm.report.iterations <= 2);
    }

    #[test]
    fn dual_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_cloud(&mut rng, 10, 2, true);
        let y = random_cloud(&mut rng, 8, 2, false);
        let model = CostModel::new(1.5).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for iters in 1..40 {
            let out = sinkhorn_solve(&x, &y, &model, 0.01, &SinkhornOptions::new(1e-300, iters), None).unwrap();
            assert!(out.report.dual_objective >= prev - 1e-12);
            prev = out.report.dual_objective;
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let x = cloud1d(&[0.0, 1.0]);
        let sq = CostModel::sq_euclidean();
        assert!(sinkhorn_solve(&x, &x, &sq, 0.0, &tight(), None).is_err());
        assert!(sinkhorn_solve(&x, &x, &sq, -1.0, &tight(), None).is_err());
        assert!(sinkhorn_solve(&x, &x, &sq, 0.1, &SinkhornOptions::new(0.0, 10), None).is_err());
        // floor: 1e-6 x (mean cost / 20) = 1e-6 * 0.0125
        assert!(sinkhorn_solve(&x, &x, &sq, 1e-9, &tight(), None).is_err());
        let bad_init = Array1::zeros(3);
        assert!(sinkhorn_solve(&x, &x, &sq, 0.1, &tight(), Some((&bad_init, &bad_init))).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let (x, y) = three_by_three();
        let out = sinkhorn_solve(
            &x,
            &y,
            &CostModel::sq_euclidean(),
            0.1,
            &SinkhornOptions::new(1e-12, 5),
            None,
        )
        .unwrap();
        assert!(!out.report.converged);
        assert_eq!(out.report.iterations, 5);
        assert!(out.report.marginal_error > 1e-12);
    }

    #[test]
    fn marginal_error_examples() {
        let a = array![0.5, 0.5];
        let b = array![0.5, 0.5];
        let prod = Coupling::product(&a, &b);
        assert_eq!(marginal_error(&prod.matrix, &a, &b), (0.0, 0.0));
        assert_eq!(marginal_error(&Array2::zeros((2, 2)), &a, &b), (1.0, 1.0));
        let diag = array![[0.5, 0.0], [0.0, 0.5]];
        assert_eq!(marginal_error(&diag, &a, &b), (0.0, 0.0));
    }

    #[test]
    fn on_demand_cost_gives_same_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_cloud(&mut rng, 20, 2, false);
        let y = random_cloud(&mut rng, 15, 2, true);
        let model = CostModel::new(1.5).unwrap();
        let dense = CostMatrix::new(&model, &x, &y).unwrap();
        let lazy = CostMatrix::with_budget(&model, &x, &y, 0).unwrap();
        let opts = SinkhornOptions::new(1e-8, 10_000);
        let a = sinkhorn_solve_cost(&dense, x.weights(), y.weights(), 0.05, &opts, None).unwrap();
        let b = sinkhorn_solve_cost(&lazy, x.weights(), y.weights(), 0.05, &opts, None).unwrap();
        // the dense path goes through the cached kernel, the lazy one through log-sum-exp
        assert_eq!(a.report.iterations, b.report.iterations);
        for (u, v) in a
            .potentials
            .f
            .iter()
            .chain(&a.potentials.g)
            .zip(b.potentials.f.iter().chain(&b.potentials.g))
        {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in a.coupling.matrix.iter().zip(&b.coupling.matrix) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
