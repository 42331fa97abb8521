use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::Matrix;
use crate::model::softmax;

/// Label-noise model `T[i][j] = Pr(observed j | true i)`, stored as
/// unconstrained logits; the realized matrix is their row-wise softmax, so any
/// SGD step keeps it row-stochastic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub theta: Matrix,
}

impl TransitionMatrix {
    /// Logits whose softmax has `diag_mass` on the diagonal and the remainder
    /// spread uniformly over each row.
    pub fn init_near_identity(num_classes: usize, diag_mass: f64) -> Result<Self> {
        ensure!(num_classes >= 2, "need at least 2 classes");
        let k = num_classes as f64;
        ensure!(
            diag_mass > 1.0 / k && diag_mass < 1.0,
            "diag_mass must lie in (1/K, 1), got {}",
            diag_mass
        );
        let logit = (diag_mass * (k - 1.0) / (1.0 - diag_mass)).ln();
        Ok(TransitionMatrix {
            theta: Matrix::from_fn(num_classes, num_classes, |i, j| {
                if i == j {
                    logit
                } else {
                    0.0
                }
            }),
        })
    }

    pub fn from_logits(theta: Matrix) -> Result<Self> {
        ensure!(theta.rows() == theta.cols(), "transition logits must be square");
        Ok(TransitionMatrix { theta })
    }

    pub fn num_classes(&self) -> usize {
        self.theta.rows()
    }

    pub fn realized(&self) -> Matrix {
        let k = self.num_classes();
        let mut t = Matrix::zeros(k, k);
        for i in 0..k {
            t.row_mut(i).copy_from_slice(&softmax(self.theta.row(i)));
        }
        t
    }
}

/// Gradient with respect to the logits of a row-wise softmax `t`.
pub(crate) fn row_softmax_backward(t: &Matrix, grad_t: &Matrix) -> Matrix {
    let (k, m) = t.shape();
    let mut out = Matrix::zeros(k, m);
    for i in 0..k {
        let inner: f64 = (0..m).map(|j| t[(i, j)] * grad_t[(i, j)]).sum();
        for j in 0..m {
            out[(i, j)] = t[(i, j)] * (grad_t[(i, j)] - inner);
        }
    }
    out
}
