use serde::{Deserialize, Serialize};

use super::{MlpParams, TensorKind};
use crate::error::{ensure, NoodleError, Result};
use crate::linalg::Matrix;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive, got {}", self.lr);
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            "momentum must lie in [0, 1), got {}",
            self.momentum
        );
        ensure!(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay must be nonnegative, got {}",
            self.weight_decay
        );
        Ok(())
    }

    /// `v ← μ·v + (g + wd·p)`, `p ← p − lr·v`; decay applies only when `decay` is set.
    pub fn update(&self, param: &mut [f64], grad: &[f64], velocity: &mut [f64], decay: bool) {
        let wd = if decay { self.weight_decay } else { 0.0 };
        for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
            *v = self.momentum * *v + (g + wd * *p);
            *p -= self.lr * *v;
        }
    }

    /// Update for an unconstrained matrix parameter that never takes weight decay.
    pub fn update_matrix(&self, param: &mut Matrix, grad: &Matrix, velocity: &mut Matrix) {
        self.update(param.as_mut_slice(), grad.as_slice(), velocity.as_mut_slice(), false);
    }
}

/// One optimizer step on the encoder/head parameters. Biases skip weight decay.
pub fn sgd_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    velocity: &mut MlpParams,
    sgd: &Sgd,
) -> Result<()> {
    if grads.tensors().iter().any(|(t, _)| t.iter().any(|v| !v.is_finite())) {
        return Err(NoodleError::NonFinite("parameter gradient".into()));
    }
    let grads = grads.tensors();
    let velocity = velocity.tensors_mut();
    for (((p, kind), (g, _)), (v, _)) in params.tensors_mut().into_iter().zip(grads).zip(velocity) {
        sgd.update(p, g, v, kind == TensorKind::Weight);
    }
    Ok(())
}

/// Rescales all gradients jointly so their global ℓ2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut MlpParams, extra: Option<&mut Matrix>, max_norm: f64) -> f64 {
    let mut sq: f64 = grads
        .tensors()
        .iter()
        .map(|(t, _)| t.iter().map(|v| v * v).sum::<f64>())
        .sum();
    if let Some(m) = extra.as_deref() {
        sq += m.as_slice().iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (t, _) in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= scale);
        }
        if let Some(m) = extra {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}
