use super::matrix::{dot, Matrix};
use crate::error::{ensure, Result};

/// Thin QR factors of a tall matrix: `A = Q·R`, `Q` is d×k with orthonormal
/// columns and `R` is k×k upper-triangular with a nonnegative diagonal.
#[derive(Debug, Clone)]
pub struct ThinQr {
    pub q: Matrix,
    pub r: Matrix,
}

impl ThinQr {
    /// Columns whose pivot `|R[j][j]|` is at most `tol`.
    pub fn deficient_columns(&self, tol: f64) -> Vec<usize> {
        (0..self.r.rows())
            .filter(|&j| self.r[(j, j)].abs() <= tol)
            .collect()
    }
}

/// Householder thin QR.
pub fn qr_thin(a: &Matrix) -> Result<ThinQr> {
    let (d, k) = a.shape();
    ensure!(k >= 1, "qr_thin needs at least one column");
    ensure!(k <= d, "qr_thin needs k <= d, got {}x{}", d, k);

    let mut work = a.clone();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);

    for j in 0..k {
        let mut v: Vec<f64> = (j..d).map(|i| work[(i, j)]).collect();
        let norm_x = dot(&v, &v).sqrt();
        if norm_x == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm_x } else { norm_x };
        v[0] -= alpha;
        let norm_v = dot(&v, &v).sqrt();
        if norm_v == 0.0 {
            reflectors.push(None);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm_v);
        apply_reflector(&mut work, &v, j, j..k);
        reflectors.push(Some(v));
    }

    let mut r = Matrix::from_fn(k, k, |i, j| if i <= j { work[(i, j)] } else { 0.0 });

    let mut q = Matrix::from_fn(d, k, |i, j| if i == j { 1.0 } else { 0.0 });
    for (j, v) in reflectors.iter().enumerate().rev() {
        if let Some(v) = v {
            apply_reflector(&mut q, v, j, 0..k);
        }
    }

    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for c in 0..k {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }

    Ok(ThinQr { q, r })
}

/// Applies `I − 2vvᵀ` (acting on rows `offset..`) to the given columns of `m`.
fn apply_reflector(m: &mut Matrix, v: &[f64], offset: usize, cols: std::ops::Range<usize>) {
    for c in cols {
        let s: f64 = v
            .iter()
            .enumerate()
            .map(|(i, vi)| vi * m[(offset + i, c)])
            .sum();
        if s == 0.0 {
            continue;
        }
        for (i, vi) in v.iter().enumerate() {
            m[(offset + i, c)] -= 2.0 * s * vi;
        }
    }
}
