use ndarray::Array2;
use serde::Serialize;

use crate::coupling::Coupling;
use crate::sinkhorn::marginal_error;
use crate::{Error, Result};

/// Smallest diagonal value used inside the identity KL.
pub const KL_CLAMP: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingMetrics {
    /// `<P, C>`
    pub transport_cost: f64,
    /// `-sum P (log P - 1)`, with `0 log 0 = 0`.
    pub entropy: f64,
    pub row_error: f64,
    pub col_error: f64,
}

pub fn coupling_metrics(p: &Coupling, c: &Array2<f64>) -> Result<CouplingMetrics> {
    if p.matrix.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.nrows(),
            got: p.matrix.nrows(),
        });
    }
    let transport_cost = (&p.matrix * c).sum();
    let entropy = -p
        .matrix
        .iter()
        .map(|v| if *v > 0.0 { v * (v.ln() - 1.0) } else { 0.0 })
        .sum::<f64>();
    let (row_error, col_error) = marginal_error(&p.matrix, &p.row_weights, &p.col_weights);
    Ok(CouplingMetrics {
        transport_cost,
        entropy,
        row_error,
        col_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityMetrics {
    /// Diagonal mass of the normalized plan; 1 for the identity coupling.
    pub trace: f64,
    /// `KL(Id/n || P)`.
    pub kl_from_identity: f64,
}

pub fn identity_recovery_metrics(p: &Coupling) -> Result<IdentityMetrics> {
    let (n, m) = p.shape();
    if n != m {
        return Err(Error::DimensionMismatch { expected: n, got: m });
    }
    let mass = p.mass();
    if !(mass > 0.0) {
        return Err(Error::Numerical("coupling has no mass".into()));
    }
    let diag: Vec<f64> = (0..n).map(|i| p.matrix[[i, i]] / mass).collect();
    let trace = diag.iter().sum();
    let nf = n as f64;
    let kl = -nf.ln() - diag.iter().map(|d| d.max(KL_CLAMP).ln()).sum::<f64>() / nf;
    Ok(IdentityMetrics {
        trace,
        kl_from_identity: kl,
    })
}

/// Mean over rows of `||a_i - b_i||^2`.
pub fn mean_squared_error(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    Ok((a - b).mapv(|v| v * v).sum() / a.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::oracle::exact_ot_oracle;
    use crate::geometry::{cost_matrix, default_eps_scale, CostModel, PointCloud};
    use crate::sinkhorn::{sinkhorn_solve, SinkhornOptions};
    use ndarray::{array, Array1};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_plan_has_zero_cost() {
        let c = array![[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]];
        let m = coupling_metrics(&Coupling::identity(3), &c).unwrap();
        assert_eq!(m.transport_cost, 0.0);
        assert_eq!((m.row_error, m.col_error), (0.0, 0.0));
    }

    #[test]
    fn product_entropy_closed_form() {
        let w = array![0.5, 0.5];
        let m = coupling_metrics(&Coupling::product(&w, &w), &Array2::zeros((2, 2))).unwrap();
        assert!((m.entropy - (4f64.ln() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn entropy_ordering_on_three_points() {
        let x = PointCloud::from_rows(&[vec![0.0], vec![1.0], vec![4.0]]).unwrap();
        let y = PointCloud::from_rows(&[vec![0.0], vec![2.0], vec![5.0]]).unwrap();
        let sq = CostModel::sq_euclidean();
        let c = cost_matrix(&sq, &x, &y).unwrap();
        let prod = coupling_metrics(&Coupling::product(x.weights(), y.weights()), &c).unwrap();
        let eps = default_eps_scale(&sq, &x, &y).unwrap();
        let ent = sinkhorn_solve(&x, &y, &sq, eps, &SinkhornOptions::new(1e-9, 100_000), None).unwrap();
        let ent = coupling_metrics(&ent.coupling, &c).unwrap();
        let (lp, _) = exact_ot_oracle(&x, &y, &sq).unwrap();
        let lp = coupling_metrics(&lp, &c).unwrap();
        assert!(prod.entropy >= ent.entropy && ent.entropy >= lp.entropy);
        assert!(prod.transport_cost >= ent.transport_cost && ent.transport_cost >= lp.transport_cost);
    }

    #[test]
    fn identity_metrics_examples() {
        let m = identity_recovery_metrics(&Coupling::identity(5)).unwrap();
        assert!((m.trace - 1.0).abs() < 1e-15);
        assert!(m.kl_from_identity.abs() < 1e-14);
        let w = Array1::from_elem(5, 0.2);
        let m = identity_recovery_metrics(&Coupling::product(&w, &w)).unwrap();
        assert!((m.trace - 0.2).abs() < 1e-15);
        assert!((m.kl_from_identity - 5f64.ln()).abs() < 1e-14);
        let rect = Coupling::product(&w, &array![0.5, 0.5]);
        assert!(identity_recovery_metrics(&rect).is_err());
    }

    #[test]
    fn zero_diagonal_is_clamped() {
        let mut p = Coupling::identity(2);
        p.matrix = array![[0.0, 0.5], [0.5, 0.0]];
        let m = identity_recovery_metrics(&p).unwrap();
        assert_eq!(m.trace, 0.0);
        assert!(m.kl_from_identity.is_finite() && m.kl_from_identity > 600.0);
    }

    #[test]
    fn metrics_invariant_to_joint_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let raw = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 5.0 } else { rng.random_range(0.0..1.0) });
        let p = Coupling {
            matrix: &raw / raw.sum(),
            row_weights: Array1::from_elem(n, 1.0 / n as f64),
            col_weights: Array1::from_elem(n, 1.0 / n as f64),
        };
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut permuted = p.clone();
        for i in 0..n {
            for j in 0..n {
                permuted.matrix[[perm[i], perm[j]]] = p.matrix[[i, j]];
            }
        }
        let a = identity_recovery_metrics(&p).unwrap();
        let b = identity_recovery_metrics(&permuted).unwrap();
        assert!((a.trace - b.trace).abs() < 1e-14);
        assert!((a.kl_from_identity - b.kl_from_identity).abs() < 1e-12);
    }

    #[test]
    fn mse_example() {
        let a = array![[0.0, 0.0], [1.0, 1.0]];
        let b = array![[3.0, 4.0], [1.0, 1.0]];
        assert_eq!(mean_squared_error(&a, &b).unwrap(), 12.5);
    }
}
