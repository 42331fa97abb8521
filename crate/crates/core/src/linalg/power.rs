use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::{dot, Matrix};
use super::qr::qr_thin;
use crate::error::{ensure, Result};

/// Pivots below this fraction of `‖Z‖_F` count as rank-deficient.
const PIVOT_TOL: f64 = 1e-12;

/// Block power iteration for the dominant left singular subspace of `h` (d×n).
///
/// Starts from a Gaussian d×k draw orthonormalized once, then repeats
/// `Z ← H·(Hᵀ·Q)`, `Q ← qr(Z).Q` for `n_iter` rounds. Rank-deficient pivots
/// are refilled with fresh random directions orthogonal to the rest of `Q`.
/// If `H·Hᵀ·Q` vanishes (e.g. `H = 0`) the current basis is kept, so an
/// all-zero `H` returns the orthonormalized initial draw.
pub fn approx_topk_singular_vectors<R: Rng + ?Sized>(
    h: &Matrix,
    k: usize,
    n_iter: usize,
    rng: &mut R,
) -> Result<Matrix> {
    let (d, n) = h.shape();
    ensure!(
        k >= 1 && k <= d.min(n),
        "target rank {} outside [1, {}]",
        k,
        d.min(n)
    );
    ensure!(n_iter >= 1, "power iteration needs n_iter >= 1");

    let init = Matrix::from_fn(d, k, |_, _| StandardNormal.sample(rng));
    let mut q = orthonormalize(&init, rng)?;

    for _ in 0..n_iter {
        let z = h.matmul(&h.t_matmul(&q)?)?;
        if z.frobenius_norm() == 0.0 {
            break;
        }
        q = orthonormalize(&z, rng)?;
    }
    Ok(q)
}

/// Orthonormal basis for the columns of `z`, refilling deficient directions at random.
pub(crate) fn orthonormalize<R: Rng + ?Sized>(z: &Matrix, rng: &mut R) -> Result<Matrix> {
    let qr = qr_thin(z)?;
    let deficient = qr.deficient_columns(PIVOT_TOL * z.frobenius_norm());
    let mut q = qr.q;
    for j in deficient {
        refill_column(&mut q, j, rng);
    }
    Ok(q)
}

fn refill_column<R: Rng + ?Sized>(q: &mut Matrix, j: usize, rng: &mut R) {
    let (d, k) = q.shape();
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        // Two Gram-Schmidt passes keep the result orthogonal to working precision.
        for _ in 0..2 {
            for c in (0..k).filter(|&c| c != j) {
                let col = q.column(c);
                let s = dot(&col, &v);
                v.iter_mut().zip(&col).for_each(|(x, y)| *x -= s * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            q.set_column(j, &v);
            return;
        }
    }
}
