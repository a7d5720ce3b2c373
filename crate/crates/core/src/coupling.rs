//! Dense transport plans together with the marginals they are meant to match.

use ndarray::{Array1, Array2, Axis};

use crate::{Error, Result};

/// An `n x m` nonnegative transport plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub matrix: Array2<f64>,
    pub row_weights: Array1<f64>,
    pub col_weights: Array1<f64>,
}

impl Coupling {
    pub fn new(matrix: Array2<f64>, row_weights: Array1<f64>, col_weights: Array1<f64>) -> Result<Self> {
        let (n, m) = matrix.dim();
        if row_weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row_weights.len(),
            });
        }
        if col_weights.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: col_weights.len(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "coupling entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            matrix,
            row_weights,
            col_weights,
        })
    }

    /// The independent coupling `a b^T`.
    pub fn product(a: &Array1<f64>, b: &Array1<f64>) -> Self {
        let matrix = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j]);
        Self {
            matrix,
            row_weights: a.clone(),
            col_weights: b.clone(),
        }
    }

    /// `Id / n` with uniform marginals.
    pub fn identity(n: usize) -> Self {
        let w = Array1::from_elem(n, 1.0 / n as f64);
        Self {
            matrix: Array2::from_diag(&w),
            row_weights: w.clone(),
            col_weights: w,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.dim()
    }

    pub fn mass(&self) -> f64 {
        self.matrix.sum()
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.matrix.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<f64> {
        self.matrix.sum_axis(Axis(0))
    }
}
