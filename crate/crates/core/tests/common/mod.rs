//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use noodle_core::Matrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn orthonormal_na(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// A d×n matrix `U·diag(s)·Vᵀ` with the given singular values.
pub fn with_singular_values(d: usize, n: usize, s: &[f64], rng: &mut impl Rng) -> Matrix {
    let r = s.len();
    let u = orthonormal_na(d, r, rng);
    let v = orthonormal_na(n, r, rng);
    let h = u * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(s)) * v.transpose();
    Matrix::from_fn(d, n, |i, j| h[(i, j)])
}

/// Orthonormal basis (d×k) of the dominant eigenspace of `H·Hᵀ`.
pub fn exact_top_subspace(h: &Matrix, k: usize) -> DMatrix<f64> {
    let hn = to_na(h);
    let eig = SymmetricEigen::new(&hn * hn.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(h.rows(), k, |i, j| eig.eigenvectors[(i, order[j])])
}

/// Largest principal angle between span(q_hat) and span(q_exact), both orthonormal.
pub fn max_principal_angle(q_hat: &Matrix, q_exact: &DMatrix<f64>) -> f64 {
    let qh = to_na(q_hat);
    let residual = &qh - q_exact * (q_exact.transpose() * &qh);
    let sin = residual.singular_values().max();
    sin.min(1.0).asin()
}

/// The full singular spectrum, descending.
pub fn singular_values(h: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(h).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `P(a > b) + ½·P(a = b)` over all pairs.
pub fn pairwise_auroc(a: &[f64], b: &[f64]) -> f64 {
    let mut wins = 0.0;
    for x in a {
        for y in b {
            if x > y {
                wins += 1.0;
            } else if x == y {
                wins += 0.5;
            }
        }
    }
    wins / (a.len() * b.len()) as f64
}

/// Scans every ID score as a threshold and keeps the highest one admitting at
/// least `num/den` of the ID scores; returns the OOD fraction at or above it.
pub fn scan_fpr(id: &[f64], ood: &[f64], num: usize, den: usize) -> f64 {
    let mut best: Option<f64> = None;
    for &t in id {
        let admitted = id.iter().filter(|&&s| s >= t).count();
        if admitted * den >= num * id.len() && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the minimum ID score admits everything");
    ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64
}

/// Central differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Compares entries whose magnitude exceeds `floor` at relative tolerance `rtol`.
pub fn check_gradient(analytic: &[f64], numeric: &[f64], rtol: f64, floor: f64) -> Result<(), String> {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        if scale > floor && (a - n).abs() > rtol * scale {
            return Err(format!("entry {i}: analytic {a:e}, numeric {n:e}"));
        }
    }
    Ok(())
}
