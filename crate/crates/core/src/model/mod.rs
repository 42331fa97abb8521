//! Feed-forward ReLU encoder `h` with a linear classification head `c`,
//! hand-written forward/backward passes and SGD with momentum.
//!
//! Batches are carried column-wise internally: the latent matrix is L×B and
//! logits/probabilities are K×B, one column per sample.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use optim::{clip_global_norm, sgd_step, Sgd};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    /// Widths of the hidden layers before the latent layer.
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    /// Input → 64 → 64 → 32-dimensional latent.
    pub fn default_for(input_dim: usize, num_classes: usize) -> Self {
        Architecture {
            input_dim,
            hidden_widths: vec![64, 64],
            latent_dim: 32,
            num_classes,
        }
    }

    /// `(fan_in, fan_out)` for every encoder layer, ending at the latent layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_widths);
        widths.push(self.latent_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim >= 1, "input_dim must be positive");
        ensure!(self.latent_dim >= 1, "latent_dim must be positive");
        ensure!(self.num_classes >= 2, "num_classes must be at least 2");
        ensure!(
            self.hidden_widths.iter().all(|&w| w >= 1),
            "hidden widths must be positive"
        );
        Ok(())
    }
}

/// Encoder weights (out×in) and biases per layer, plus the K×L head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_weights: Vec<Matrix>,
    pub layer_biases: Vec<Vec<f64>>,
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

impl MlpParams {
    /// Kaiming-uniform weights (`±√(6/fan_in)` for ReLU layers, `±√(1/fan_in)`
    /// for the head) and zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut layer_weights = Vec::new();
        let mut layer_biases = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let bound = (6.0 / fan_in as f64).sqrt();
            layer_weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| {
                rng.random_range(-bound..bound)
            }));
            layer_biases.push(vec![0.0; fan_out]);
        }
        let bound = (1.0 / arch.latent_dim as f64).sqrt();
        let head_weight = Matrix::from_fn(arch.num_classes, arch.latent_dim, |_, _| {
            rng.random_range(-bound..bound)
        });
        Ok(MlpParams {
            layer_weights,
            layer_biases,
            head_weight,
            head_bias: vec![0.0; arch.num_classes],
        })
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layer_weights: self
                .layer_weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            layer_biases: self.layer_biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            head_weight: Matrix::zeros(self.head_weight.rows(), self.head_weight.cols()),
            head_bias: vec![0.0; self.head_bias.len()],
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.layer_weights[0].cols(),
            hidden_widths: self.layer_weights[..self.layer_weights.len() - 1]
                .iter()
                .map(Matrix::rows)
                .collect(),
            latent_dim: self.latent_dim(),
            num_classes: self.num_classes(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.head_weight.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.head_weight.rows()
    }

    /// Checks that layer shapes chain and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.layer_weights.is_empty(), "encoder needs at least one layer");
        ensure!(
            self.layer_weights.len() == self.layer_biases.len(),
            "weight/bias layer count mismatch"
        );
        for (i, (w, b)) in self.layer_weights.iter().zip(&self.layer_biases).enumerate() {
            ensure!(w.rows() == b.len(), "layer {} bias length mismatch", i);
            if i > 0 {
                ensure!(
                    w.cols() == self.layer_weights[i - 1].rows(),
                    "layer {} input width does not chain",
                    i
                );
            }
        }
        let last = self.layer_weights.last().map_or(0, Matrix::rows);
        ensure!(
            self.head_weight.cols() == last,
            "head expects latent width {}, encoder gives {}",
            self.head_weight.cols(),
            last
        );
        ensure!(
            self.head_bias.len() == self.head_weight.rows(),
            "head bias length mismatch"
        );
        ensure!(
            self.tensors().iter().all(|(t, _)| t.iter().all(|v| v.is_finite())),
            "non-finite parameter"
        );
        Ok(())
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(&[f64], TensorKind)> {
        let mut out = Vec::with_capacity(2 * self.layer_weights.len() + 2);
        for (w, b) in self.layer_weights.iter().zip(&self.layer_biases) {
            out.push((w.as_slice(), TensorKind::Weight));
            out.push((b.as_slice(), TensorKind::Bias));
        }
        out.push((self.head_weight.as_slice(), TensorKind::Weight));
        out.push((self.head_bias.as_slice(), TensorKind::Bias));
        out
    }

    /// Mutable counterpart of [`MlpParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], TensorKind)> {
        let mut out = Vec::with_capacity(2 * self.layer_weights.len() + 2);
        for (w, b) in self.layer_weights.iter_mut().zip(&mut self.layer_biases) {
            out.push((w.as_mut_slice(), TensorKind::Weight));
            out.push((b.as_mut_slice(), TensorKind::Bias));
        }
        out.push((self.head_weight.as_mut_slice(), TensorKind::Weight));
        out.push((self.head_bias.as_mut_slice(), TensorKind::Bias));
        out
    }

    /// SHA-256 over the little-endian bytes of every parameter, hex encoded.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (t, _) in self.tensors() {
            for v in t {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// d×B input batch (transposed).
    pub input: Matrix,
    pub pre_activations: Vec<Matrix>,
    /// Post-ReLU output of each encoder layer; the last one is the latent H (L×B).
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
    pub probs: Matrix,
}

impl ForwardCache {
    pub fn latent(&self) -> &Matrix {
        self.activations.last().expect("encoder has at least one layer")
    }
}

/// Runs the encoder and head on a B×d batch.
pub fn forward(params: &MlpParams, x: &Matrix) -> Result<ForwardCache> {
    ensure!(
        x.cols() == params.layer_weights[0].cols(),
        "input has {} features, model expects {}",
        x.cols(),
        params.layer_weights[0].cols()
    );
    let input = x.transpose();
    let mut pre_activations = Vec::with_capacity(params.layer_weights.len());
    let mut activations: Vec<Matrix> = Vec::with_capacity(params.layer_weights.len());
    for (w, b) in params.layer_weights.iter().zip(&params.layer_biases) {
        let prev = activations.last().unwrap_or(&input);
        let z = affine(w, b, prev)?;
        activations.push(z.map(|v| v.max(0.0)));
        pre_activations.push(z);
    }
    let latent = activations.last().expect("at least one layer");
    let logits = affine(&params.head_weight, &params.head_bias, latent)?;
    let probs = softmax_columns(&logits);
    Ok(ForwardCache {
        input,
        pre_activations,
        activations,
        logits,
        probs,
    })
}

fn affine(w: &Matrix, b: &[f64], x: &Matrix) -> Result<Matrix> {
    let mut z = w.matmul(x)?;
    for (i, bi) in b.iter().enumerate() {
        z.row_mut(i).iter_mut().for_each(|v| *v += bi);
    }
    Ok(z)
}

/// Column-wise softmax with max subtraction.
pub fn softmax_columns(logits: &Matrix) -> Matrix {
    let (k, b) = logits.shape();
    let mut out = Matrix::zeros(k, b);
    for j in 0..b {
        let col = logits.column(j);
        let p = softmax(&col);
        out.set_column(j, &p);
    }
    out
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Column-wise argmax of a K×B matrix.
pub fn argmax_columns(m: &Matrix) -> Vec<usize> {
    (0..m.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..m.rows() {
                if m[(i, j)] > m[(best, j)] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Reverse-mode gradients of `⟨grad_logits, logits⟩ + ⟨grad_h, H⟩` with
/// respect to every parameter. `grad_h = None` means a zero latent cotangent.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_logits: &Matrix,
    grad_h: Option<&Matrix>,
) -> Result<MlpParams> {
    ensure!(
        grad_logits.shape() == cache.logits.shape(),
        "grad_logits is {}x{}, logits are {}x{}",
        grad_logits.rows(),
        grad_logits.cols(),
        cache.logits.rows(),
        cache.logits.cols()
    );
    let latent = cache.latent();
    if let Some(g) = grad_h {
        ensure!(
            g.shape() == latent.shape(),
            "grad_h is {}x{}, latent is {}x{}",
            g.rows(),
            g.cols(),
            latent.rows(),
            latent.cols()
        );
    }

    let mut grads = params.zeros_like();
    grads.head_weight = grad_logits.matmul_t(latent)?;
    grads.head_bias = row_sums(grad_logits);

    let mut grad_act = params.head_weight.t_matmul(grad_logits)?;
    if let Some(g) = grad_h {
        grad_act.axpy(1.0, g)?;
    }

    for layer in (0..params.layer_weights.len()).rev() {
        let z = &cache.pre_activations[layer];
        let grad_z = Matrix::from_fn(z.rows(), z.cols(), |i, j| {
            if z[(i, j)] > 0.0 {
                grad_act[(i, j)]
            } else {
                0.0
            }
        });
        let prev = if layer == 0 {
            &cache.input
        } else {
            &cache.activations[layer - 1]
        };
        grads.layer_weights[layer] = grad_z.matmul_t(prev)?;
        grads.layer_biases[layer] = row_sums(&grad_z);
        if layer > 0 {
            grad_act = params.layer_weights[layer].t_matmul(&grad_z)?;
        }
    }
    Ok(grads)
}

fn row_sums(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().sum()).collect()
}
