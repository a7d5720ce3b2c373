//! Exact (unregularized) discrete OT, used as ground truth.

use ndarray::{Array1, Array2};

use crate::coupling::Coupling;
use crate::geometry::{cost_matrix, CostModel, PointCloud};
use crate::{Error, Result};

/// Largest `n * m` accepted by [`exact_ot_oracle`].
pub const ORACLE_MAX_ENTRIES: usize = 10_000;

/// Optimal coupling and its cost `<P, C>`, certified by recovered duals.
pub fn exact_ot_oracle(source: &PointCloud, target: &PointCloud, model: &CostModel) -> Result<(Coupling, f64)> {
    exact_ot_oracle_with_limit(source, target, model, ORACLE_MAX_ENTRIES)
}

pub fn exact_ot_oracle_with_limit(
    source: &PointCloud,
    target: &PointCloud,
    model: &CostModel,
    max_entries: usize,
) -> Result<(Coupling, f64)> {
    let entries = source.len() * target.len();
    if entries > max_entries {
        return Err(Error::OracleTooLarge {
            entries,
            limit: max_entries,
        });
    }
    let c = cost_matrix(model, source, target)?;
    exact_ot_dense(&c, source.weights(), target.weights())
}

/// Exact OT on an explicit cost matrix.
pub fn exact_ot_dense(c: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Result<(Coupling, f64)> {
    let (n, m) = c.dim();
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.len(),
        });
    }
    let uniform_square = n == m && a.iter().chain(b).all(|w| *w == a[0]);
    let (p, u, v) = if uniform_square {
        let (assign, u, v) = hungarian(c);
        let mut p = Array2::<f64>::zeros((n, n));
        for (i, j) in assign.iter().enumerate() {
            p[[i, *j]] = a[i];
        }
        (p, u, v)
    } else {
        transportation(c, a, b)
    };
    certify(c, &p, a, b, &u, &v)?;
    let cost = (&p * c).sum();
    let coupling = Coupling {
        matrix: p,
        row_weights: a.clone(),
        col_weights: b.clone(),
    };
    Ok((coupling, cost))
}

fn tolerance(c: &Array2<f64>) -> f64 {
    1e-9 * c.iter().fold(1.0f64, |acc, v| acc.max(v.abs()))
}

/// Check primal feasibility, dual feasibility and complementary slackness.
fn certify(c: &Array2<f64>, p: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, u: &[f64], v: &[f64]) -> Result<()> {
    let tol = tolerance(c);
    let (rows, cols) = crate::sinkhorn::marginal_error(p, a, b);
    if rows > 1e-9 || cols > 1e-9 || p.iter().any(|x| *x < 0.0) {
        return Err(Error::Certificate(format!(
            "infeasible plan (marginal errors {rows:e}, {cols:e})"
        )));
    }
    for ((i, j), cij) in c.indexed_iter() {
        let slack = cij - u[i] - v[j];
        if slack < -tol {
            return Err(Error::Certificate(format!("dual infeasible at ({i}, {j}): {slack:e}")));
        }
        if p[[i, j]] > 0.0 && slack > tol {
            return Err(Error::Certificate(format!(
                "slackness violated at ({i}, {j}): {slack:e}"
            )));
        }
    }
    Ok(())
}

/// Minimum-cost perfect matching on a square matrix, with dual potentials
/// `u_i + v_j <= C_ij` tight on the matching.
fn hungarian(c: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = c.nrows();
    // 1-based shortest augmenting path formulation; index 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    (assign, u[1..].to_vec(), v[1..].to_vec())
}

/// Transportation problem by successive shortest paths with potentials.
///
/// Rows carry supplies `a`, columns demands `b`; every row-to-column arc has
/// unbounded capacity. Returns the plan and duals `u = -pi_rows`, `v = pi_cols`.
fn transportation(c: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    const EMPTY: f64 = 1e-15;
    let (n, m) = c.dim();
    let mut flow = Array2::<f64>::zeros((n, m));
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut pr = vec![0.0; n];
    let mut pc: Vec<f64> = (0..m)
        .map(|j| c.column(j).iter().copied().fold(f64::INFINITY, f64::min))
        .collect();

    #[derive(Clone, Copy)]
    enum Pred {
        None,
        Row(usize),
        Col(usize),
    }

    loop {
        if !supply.iter().any(|s| *s > EMPTY) || !demand.iter().any(|d| *d > EMPTY) {
            break;
        }
        // dense Dijkstra over rows and columns on reduced costs
        let mut dr: Vec<f64> = supply
            .iter()
            .map(|s| if *s > EMPTY { 0.0 } else { f64::INFINITY })
            .collect();
        let mut dc = vec![f64::INFINITY; m];
        let mut pred_c = vec![Pred::None; m];
        let mut pred_r = vec![Pred::None; n];
        let mut done_r = vec![false; n];
        let mut done_c = vec![false; m];
        loop {
            let mut best = f64::INFINITY;
            let mut pick = None;
            for i in 0..n {
                if !done_r[i] && dr[i] < best {
                    best = dr[i];
                    pick = Some(Pred::Row(i));
                }
            }
            for j in 0..m {
                if !done_c[j] && dc[j] < best {
                    best = dc[j];
                    pick = Some(Pred::Col(j));
                }
            }
            match pick {
                None => break,
                Some(Pred::Row(i)) => {
                    done_r[i] = true;
                    for j in 0..m {
                        if done_c[j] {
                            continue;
                        }
                        let nd = dr[i] + (c[[i, j]] + pr[i] - pc[j]).max(0.0);
                        if nd < dc[j] {
                            dc[j] = nd;
                            pred_c[j] = Pred::Row(i);
                        }
                    }
                }
                Some(Pred::Col(j)) => {
                    done_c[j] = true;
                    for i in 0..n {
                        if done_r[i] || flow[[i, j]] <= 0.0 {
                            continue;
                        }
                        let nd = dc[j] + (pc[j] - pr[i] - c[[i, j]]).max(0.0);
                        if nd < dr[i] {
                            dr[i] = nd;
                            pred_r[i] = Pred::Col(j);
                        }
                    }
                }
                Some(Pred::None) => unreachable!(),
            }
        }
        // cheapest column with remaining demand, by true path length
        let mut sink = None;
        let mut best = f64::INFINITY;
        for j in 0..m {
            if demand[j] > EMPTY && dc[j].is_finite() && dc[j] + pc[j] < best {
                best = dc[j] + pc[j];
                sink = Some(j);
            }
        }
        let Some(sink) = sink else { break };

        // walk back to find the bottleneck
        let mut amount = demand[sink];
        let mut j = sink;
        let start = loop {
            let Pred::Row(i) = pred_c[j] else { unreachable!() };
            match pred_r[i] {
                Pred::None => break i,
                Pred::Col(jj) => {
                    amount = amount.min(flow[[i, jj]]);
                    j = jj;
                }
                Pred::Row(_) => unreachable!(),
            }
        };
        amount = amount.min(supply[start]);
        let mut j = sink;
        loop {
            let Pred::Row(i) = pred_c[j] else { unreachable!() };
            flow[[i, j]] += amount;
            match pred_r[i] {
                Pred::None => break,
                Pred::Col(jj) => {
                    flow[[i, jj]] -= amount;
                    if flow[[i, jj]] < EMPTY * 1e-3 {
                        flow[[i, jj]] = 0.0;
                    }
                    j = jj;
                }
                Pred::Row(_) => unreachable!(),
            }
        }
        supply[start] -= amount;
        demand[sink] -= amount;

        for (p, d) in pr.iter_mut().zip(&dr) {
            if d.is_finite() {
                *p += d;
            }
        }
        for (p, d) in pc.iter_mut().zip(&dc) {
            if d.is_finite() {
                *p += d;
            }
        }
    }
    let u = pr.iter().map(|p| -p).collect();
    (flow, u, pc)
}
