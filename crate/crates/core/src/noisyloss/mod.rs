//! Noise-robust classification losses, the column-sparsity penalty on the
//! latent residual, and the joint training objective.
//!
//! All losses are batch means. Probabilities and logits are K×B (one column
//! per sample); gradients are returned with respect to the logits, the
//! transition logits `theta`, and the latent residual as applicable.

mod transition;

pub use transition::TransitionMatrix;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::{l21_norm, l21_subgradient, Matrix, L21_EPS};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Plain cross-entropy against the observed labels.
    Ce,
    /// Forward correction through a learned transition matrix.
    Cm,
    /// Symmetric cross-entropy.
    Sce,
    /// Generalized cross-entropy.
    Gce,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Ce, LossKind::Cm, LossKind::Sce, LossKind::Gce];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Cm => "cm",
            LossKind::Sce => "sce",
            LossKind::Gce => "gce",
        }
    }

    pub fn uses_transition(&self) -> bool {
        matches!(self, LossKind::Cm)
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown loss kind {s:?} (expected ce, cm, sce or gce)"))
    }
}

/// Hyperparameters of the robust losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustLossParams {
    pub sce_alpha: f64,
    pub sce_beta: f64,
    /// Value substituted for `log 0` in the reverse cross-entropy.
    pub sce_clamp: f64,
    pub gce_q: f64,
}

impl Default for RobustLossParams {
    fn default() -> Self {
        RobustLossParams {
            sce_alpha: 0.1,
            sce_beta: 1.0,
            sce_clamp: -4.0,
            gce_q: 0.7,
        }
    }
}

impl RobustLossParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sce_alpha >= 0.0 && self.sce_beta >= 0.0,
            "sce_alpha and sce_beta must be nonnegative"
        );
        ensure!(self.sce_clamp < 0.0, "sce_clamp must be negative");
        ensure!(
            self.gce_q > 0.0 && self.gce_q <= 1.0,
            "gce_q must lie in (0, 1], got {}",
            self.gce_q
        );
        Ok(())
    }
}

/// Loss value with whichever gradients the loss produces; `None` stands for
/// an identically zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// K×B.
    pub grad_logits: Option<Matrix>,
    /// K×K, with respect to the transition logits.
    pub grad_theta: Option<Matrix>,
    /// L×B, with respect to the latent residual.
    pub grad_h: Option<Matrix>,
}

impl LossOutput {
    pub fn scaled(&self, c: f64) -> LossOutput {
        LossOutput {
            value: c * self.value,
            grad_logits: self.grad_logits.as_ref().map(|m| m.scale(c)),
            grad_theta: self.grad_theta.as_ref().map(|m| m.scale(c)),
            grad_h: self.grad_h.as_ref().map(|m| m.scale(c)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && [&self.grad_logits, &self.grad_theta, &self.grad_h]
                .into_iter()
                .flatten()
                .all(Matrix::is_finite)
    }
}

fn check_labels(probs: &Matrix, labels: &[usize]) -> Result<()> {
    ensure!(
        labels.len() == probs.cols(),
        "{} labels for a batch of {}",
        labels.len(),
        probs.cols()
    );
    ensure!(probs.cols() >= 1, "empty batch");
    ensure!(
        labels.iter().all(|&y| y < probs.rows()),
        "label outside [0, {})",
        probs.rows()
    );
    Ok(())
}

fn mean_neg_log(values: impl Iterator<Item = f64>, batch: usize) -> f64 {
    let total: f64 = values.map(|p| p.max(PROB_FLOOR).ln()).sum();
    -total / batch as f64
}

/// Pulls a gradient with respect to probabilities back through the softmax.
pub fn softmax_backward(probs: &Matrix, grad_probs: &Matrix) -> Matrix {
    let (k, b) = probs.shape();
    let mut out = Matrix::zeros(k, b);
    for j in 0..b {
        let inner: f64 = (0..k).map(|i| probs[(i, j)] * grad_probs[(i, j)]).sum();
        for i in 0..k {
            out[(i, j)] = probs[(i, j)] * (grad_probs[(i, j)] - inner);
        }
    }
    out
}

/// Mean negative log-likelihood of `labels`; `grad_logits = (p − onehot)/B`.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    check_labels(probs, labels)?;
    let b = probs.cols();
    let value = mean_neg_log(labels.iter().enumerate().map(|(n, &y)| probs[(y, n)]), b);
    let mut grad = probs.scale(1.0 / b as f64);
    for (n, &y) in labels.iter().enumerate() {
        grad[(y, n)] = (probs[(y, n)] - 1.0) / b as f64;
    }
    Ok(LossOutput {
        value,
        grad_logits: Some(grad),
        grad_theta: None,
        grad_h: None,
    })
}

/// Forward-corrected cross-entropy: the observed label is scored under the
/// noisy posterior `q = Tᵀ·p`, with `T[i][j] = Pr(observed j | true i)`.
pub fn forward_corrected_ce(
    probs: &Matrix,
    transition: &TransitionMatrix,
    noisy_labels: &[usize],
) -> Result<LossOutput> {
    let realized = transition.realized();
    let (mut out, grad_t) = corrected_ce_with_realized(probs, &realized, noisy_labels)?;
    out.grad_theta = Some(transition::row_softmax_backward(&realized, &grad_t));
    Ok(out)
}

/// Forward correction against an explicit row-stochastic `T`. Returns the
/// loss (gradient on logits only) and the gradient with respect to `T` itself.
pub fn corrected_ce_with_realized(
    probs: &Matrix,
    t: &Matrix,
    noisy_labels: &[usize],
) -> Result<(LossOutput, Matrix)> {
    check_labels(probs, noisy_labels)?;
    let (k, b) = probs.shape();
    ensure!(t.shape() == (k, k), "transition matrix must be {}x{}", k, k);

    let noisy_posterior: Vec<f64> = noisy_labels
        .iter()
        .enumerate()
        .map(|(n, &y)| (0..k).map(|i| t[(i, y)] * probs[(i, n)]).sum())
        .collect();
    let value = mean_neg_log(noisy_posterior.iter().copied(), b);

    let mut grad_probs = Matrix::zeros(k, b);
    let mut grad_t = Matrix::zeros(k, k);
    for (n, &y) in noisy_labels.iter().enumerate() {
        let q = noisy_posterior[n].max(PROB_FLOOR);
        let coef = -1.0 / (b as f64 * q);
        for i in 0..k {
            grad_probs[(i, n)] = coef * t[(i, y)];
            grad_t[(i, y)] += coef * probs[(i, n)];
        }
    }
    Ok((
        LossOutput {
            value,
            grad_logits: Some(softmax_backward(probs, &grad_probs)),
            grad_theta: None,
            grad_h: None,
        },
        grad_t,
    ))
}

/// `alpha·CE + beta·RCE`, where the reverse cross-entropy scores the
/// prediction against the one-hot label with `log 0` replaced by `clamp`.
pub fn sce_loss(
    probs: &Matrix,
    labels: &[usize],
    alpha: f64,
    beta: f64,
    clamp: f64,
) -> Result<LossOutput> {
    ensure!(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be nonnegative");
    ensure!(clamp < 0.0, "clamp must be negative");
    let ce = cross_entropy(probs, labels)?;
    let (k, b) = probs.shape();

    let off_label_mass: f64 = labels
        .iter()
        .enumerate()
        .map(|(n, &y)| (0..k).filter(|&i| i != y).map(|i| probs[(i, n)]).sum::<f64>())
        .sum();
    let rce = -clamp * off_label_mass / b as f64;

    let mut grad_probs = Matrix::from_fn(k, b, |_, _| -clamp / b as f64);
    for (n, &y) in labels.iter().enumerate() {
        grad_probs[(y, n)] = 0.0;
    }
    let mut grad = ce.grad_logits.expect("cross_entropy sets grad_logits").scale(alpha);
    grad.axpy(beta, &softmax_backward(probs, &grad_probs))?;

    Ok(LossOutput {
        value: alpha * ce.value + beta * rce,
        grad_logits: Some(grad),
        grad_theta: None,
        grad_h: None,
    })
}

/// Generalized cross-entropy `(1 − p_y^q)/q`; tends to CE as q → 0 and to
/// `1 − p_y` at q = 1.
pub fn gce_loss(probs: &Matrix, labels: &[usize], q: f64) -> Result<LossOutput> {
    check_labels(probs, labels)?;
    ensure!(q > 0.0 && q <= 1.0, "gce q must lie in (0, 1], got {}", q);
    let (k, b) = probs.shape();
    let bf = b as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(k, b);
    for (n, &y) in labels.iter().enumerate() {
        let py_q = probs[(y, n)].powf(q);
        total += (1.0 - py_q) / q;
        for i in 0..k {
            let delta = if i == y { 1.0 } else { 0.0 };
            grad[(i, n)] = -py_q * (delta - probs[(i, n)]) / bf;
        }
    }
    Ok(LossOutput {
        value: total / bf,
        grad_logits: Some(grad),
        grad_theta: None,
        grad_h: None,
    })
}

/// `‖H_ood‖_{2,1} / B` and its subgradient.
pub fn sparsity_loss(h_ood: &Matrix) -> LossOutput {
    let b = h_ood.cols().max(1) as f64;
    LossOutput {
        value: l21_norm(h_ood) / b,
        grad_logits: None,
        grad_theta: None,
        grad_h: Some(l21_subgradient(h_ood, L21_EPS).scale(1.0 / b)),
    }
}

/// `corrected + lambda·sparse`, field by field. With `lambda = 0` the sparse
/// term contributes nothing, not even zero-valued gradients.
pub fn joint_loss(corrected: &LossOutput, sparse: &LossOutput, lambda: f64) -> Result<LossOutput> {
    ensure!(
        lambda >= 0.0 && lambda.is_finite(),
        "lambda must be nonnegative, got {}",
        lambda
    );
    if lambda == 0.0 {
        return Ok(corrected.clone());
    }
    let combine = |a: &Option<Matrix>, b: &Option<Matrix>| -> Result<Option<Matrix>> {
        Ok(match (a, b) {
            (None, None) => None,
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.scale(lambda)),
            (Some(a), Some(b)) => {
                let mut out = a.clone();
                out.axpy(lambda, b)?;
                Some(out)
            }
        })
    };
    Ok(LossOutput {
        value: corrected.value + lambda * sparse.value,
        grad_logits: combine(&corrected.grad_logits, &sparse.grad_logits)?,
        grad_theta: combine(&corrected.grad_theta, &sparse.grad_theta)?,
        grad_h: combine(&corrected.grad_h, &sparse.grad_h)?,
    })
}

/// Dispatches to the classification loss selected by `kind`.
pub fn classification_loss(
    kind: LossKind,
    probs: &Matrix,
    labels: &[usize],
    transition: &TransitionMatrix,
    params: &RobustLossParams,
) -> Result<LossOutput> {
    match kind {
        LossKind::Ce => cross_entropy(probs, labels),
        LossKind::Cm => forward_corrected_ce(probs, transition, labels),
        LossKind::Sce => sce_loss(probs, labels, params.sce_alpha, params.sce_beta, params.sce_clamp),
        LossKind::Gce => gce_loss(probs, labels, params.gce_q),
    }
}

#[cfg(test)]
mod tests;
