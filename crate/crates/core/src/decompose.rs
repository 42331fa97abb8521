//! Per-batch low-rank/sparse split of the latent feature matrix.
//!
//! Columns of `H` (L×B) are ℓ2-normalized, a rank-`k` basis `Q` for their
//! dominant subspace is estimated by power iteration, and the batch is split
//! into the projection `H_id = Q·Qᵀ·H_norm` and the residual
//! `H_ood = H_norm − H_id`.
//!
//! The backward pass treats `Q` as a constant: gradients flow through the
//! projector and the normalization, never through the power iteration.

use log::warn;
use rand::Rng;

use crate::error::{ensure, Result};
use crate::linalg::{approx_topk_singular_vectors, dot, Matrix};

pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    /// L×k orthonormal basis.
    pub q: Matrix,
    pub h_id: Matrix,
    pub h_ood: Matrix,
    /// The matrix actually decomposed (column-normalized input, or the raw
    /// input when normalization is off).
    pub h_norm: Matrix,
    /// Original column norms; `0` marks a degenerate column passed through
    /// unscaled. `None` when normalization is off.
    pub norms: Option<Vec<f64>>,
}

/// Scales every column to unit norm. Columns with norm `<= eps` are left as
/// they are and reported with norm 0.
pub fn normalize_columns(h: &Matrix, eps: f64) -> (Matrix, Vec<f64>) {
    let raw = h.column_norms();
    let norms: Vec<f64> = raw.iter().map(|&r| if r > eps { r } else { 0.0 }).collect();
    let out = Matrix::from_fn(h.rows(), h.cols(), |i, j| {
        if norms[j] > 0.0 {
            h[(i, j)] / norms[j]
        } else {
            h[(i, j)]
        }
    });
    (out, norms)
}

/// Settings for [`Decomposer::split`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposer {
    pub k_rank: usize,
    pub n_iter: usize,
    pub normalize: bool,
}

impl Decomposer {
    pub fn new(k_rank: usize, n_iter: usize) -> Self {
        Decomposer {
            k_rank,
            n_iter,
            normalize: true,
        }
    }

    pub fn split<R: Rng + ?Sized>(&self, h: &Matrix, rng: &mut R) -> Result<DecompositionResult> {
        ensure!(self.k_rank >= 1, "k_rank must be at least 1");
        ensure!(self.n_iter >= 1, "n_iter must be at least 1");
        let (l, b) = h.shape();
        let limit = l.min(b);
        let k = if self.k_rank > limit {
            warn!(
                "k_rank {} exceeds min(L, B) = {} for a {}x{} batch; clamping",
                self.k_rank, limit, l, b
            );
            limit
        } else {
            self.k_rank
        };

        let (h_norm, norms) = if self.normalize {
            let (m, n) = normalize_columns(h, NORMALIZE_EPS);
            (m, Some(n))
        } else {
            (h.clone(), None)
        };
        let q = approx_topk_singular_vectors(&h_norm, k, self.n_iter, rng)?;
        let h_id = q.matmul(&q.t_matmul(&h_norm)?)?;
        let h_ood = h_norm.sub(&h_id)?;
        Ok(DecompositionResult {
            q,
            h_id,
            h_ood,
            h_norm,
            norms,
        })
    }
}

/// Normalizes `h` and splits it with a rank-`k_rank` basis from `n_iter`
/// power-iteration rounds. `k_rank` above `min(L, B)` is clamped.
pub fn split_features<R: Rng + ?Sized>(
    h: &Matrix,
    k_rank: usize,
    n_iter: usize,
    rng: &mut R,
) -> Result<DecompositionResult> {
    Decomposer::new(k_rank, n_iter).split(h, rng)
}

/// Gradient with respect to the raw `H` given a gradient on `H_ood`, with `Q` frozen.
///
/// The projector contributes `(I − QQᵀ)·g`; a normalized column `ĥ = h/r`
/// then pulls back through `(I − ĥĥᵀ)/r`.
pub fn grad_through_split(result: &DecompositionResult, grad_h_ood: &Matrix) -> Result<Matrix> {
    ensure!(
        grad_h_ood.shape() == result.h_ood.shape(),
        "gradient is {}x{}, residual is {}x{}",
        grad_h_ood.rows(),
        grad_h_ood.cols(),
        result.h_ood.rows(),
        result.h_ood.cols()
    );
    let q = &result.q;
    let projected = q.matmul(&q.t_matmul(grad_h_ood)?)?;
    let g_norm = grad_h_ood.sub(&projected)?;

    let Some(norms) = &result.norms else {
        return Ok(g_norm);
    };
    let mut out = g_norm;
    for (j, &r) in norms.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let u = result.h_norm.column(j);
        let g = out.column(j);
        let radial = dot(&u, &g);
        let pulled: Vec<f64> = g.iter().zip(&u).map(|(gi, ui)| (gi - ui * radial) / r).collect();
        out.set_column(j, &pulled);
    }
    Ok(out)
}
