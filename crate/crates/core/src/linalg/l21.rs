use super::matrix::Matrix;

/// Default threshold below which a column counts as zero for the subgradient.
pub const L21_EPS: f64 = 1e-12;

/// Mixed `‖M‖_{2,1}`: the sum of column ℓ2 norms.
pub fn l21_norm(m: &Matrix) -> f64 {
    m.column_norms().into_iter().sum()
}

/// A subgradient of [`l21_norm`]: each column divided by its norm, zero
/// columns (norm `<= eps`) mapped to zero.
pub fn l21_subgradient(m: &Matrix, eps: f64) -> Matrix {
    let norms = m.column_norms();
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        if norms[j] > eps {
            m[(i, j)] / norms[j]
        } else {
            0.0
        }
    })
}
