//! The NOODLE training loop: epochs of shuffled mini-batches, each running
//! forward → latent split → joint loss → backward → one SGD step on the
//! encoder and, for the `cm` loss, on the transition logits.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::LabeledSet;
use crate::decompose::{grad_through_split, Decomposer};
use crate::error::{ensure, NoodleError, Result};
use crate::linalg::Matrix;
use crate::model::{backward, clip_global_norm, forward, sgd_step, Architecture, MlpParams, Sgd};
use crate::noisyloss::{
    classification_loss, joint_loss, sparsity_loss, LossKind, RobustLossParams, TransitionMatrix,
};
use crate::ood::{build_store, EmbeddingStore, DEFAULT_COV_REG};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub loss_kind: LossKind,
    /// Rank of the in-distribution subspace; `None` means the number of classes.
    pub k_rank: Option<usize>,
    pub pi_iters: usize,
    pub normalize: bool,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    pub t_diag_init: f64,
    pub grad_clip: f64,
    pub robust: RobustLossParams,
    pub cov_reg: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            lambda: 0.001,
            loss_kind: LossKind::Cm,
            k_rank: None,
            pi_iters: 10,
            normalize: true,
            seed: 0,
            hidden_widths: vec![64, 64],
            latent_dim: 32,
            t_diag_init: 0.99,
            grad_clip: 10.0,
            robust: RobustLossParams::default(),
            cov_reg: DEFAULT_COV_REG,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NoodleError::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.k_rank == Some(0) {
            return bad("k_rank must be positive".into());
        }
        if self.pi_iters == 0 {
            return bad("pi_iters must be positive".into());
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(self.cov_reg > 0.0 && self.cov_reg.is_finite()) {
            return bad(format!("cov_reg must be positive, got {}", self.cov_reg));
        }
        if !(self.t_diag_init > 0.0 && self.t_diag_init < 1.0) {
            return bad(format!("t_diag_init must lie in (0, 1), got {}", self.t_diag_init));
        }
        let wrap = |e: NoodleError| match e {
            NoodleError::Contract(m) => NoodleError::Config(m),
            other => other,
        };
        self.sgd().validate().map_err(wrap)?;
        self.robust.validate().map_err(wrap)?;
        Ok(())
    }

    pub fn sgd(&self) -> Sgd {
        Sgd {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden_widths: self.hidden_widths.clone(),
            latent_dim: self.latent_dim,
            num_classes,
        }
    }

    pub fn rank_for(&self, num_classes: usize) -> usize {
        self.k_rank.unwrap_or(num_classes)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: MlpParams,
    pub transition: TransitionMatrix,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub store: EmbeddingStore,
    pub config_hash: String,
}

/// Batches of sample indices for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, order: &[usize]) -> Vec<Vec<usize>> {
    let b = batch_size.min(n).max(1);
    order.chunks(b).map(<[usize]>::to_vec).collect()
}

pub fn train(data: &LabeledSet, config: &TrainConfig) -> Result<TrainResult> {
    ensure!(!data.is_empty(), "training set is empty");
    config.validate()?;
    let k = data.num_classes;
    let arch = config.architecture(data.dim(), k);
    arch.validate()?;

    let mut params = MlpParams::init(&arch, &mut stream(config.seed, Stream::Init))?;
    let mut velocity = params.zeros_like();
    let mut transition = TransitionMatrix::init_near_identity(k, config.t_diag_init)?;
    let mut theta_velocity = Matrix::zeros(k, k);
    let sgd = config.sgd();
    let decomposer = Decomposer {
        k_rank: config.rank_for(k),
        n_iter: config.pi_iters,
        normalize: config.normalize,
    };
    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut split_rng = stream(config.seed, Stream::Decompose);
    let update_theta = config.loss_kind.uses_transition();

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let batches = epoch_batches(n, config.batch_size, &order);
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let diverged = |detail: String| NoodleError::Divergence {
                epoch,
                batch: bi,
                detail,
            };
            let x = data.features.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.noisy_labels[i]).collect();

            let cache = forward(&params, &x)?;
            let cls = classification_loss(config.loss_kind, &cache.probs, &labels, &transition, &config.robust)?;
            let split = decomposer.split(cache.latent(), &mut split_rng)?;
            let sparse = sparsity_loss(&split.h_ood);
            let loss = joint_loss(&cls, &sparse, config.lambda)?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss {}", loss.value)));
            }

            let grad_h = match &loss.grad_h {
                Some(g) => Some(grad_through_split(&split, g)?),
                None => None,
            };
            let grad_logits = loss
                .grad_logits
                .clone()
                .unwrap_or_else(|| Matrix::zeros(cache.logits.rows(), cache.logits.cols()));
            let mut grads = backward(&params, &cache, &grad_logits, grad_h.as_ref())?;
            let mut grad_theta = if update_theta { loss.grad_theta.clone() } else { None };
            clip_global_norm(&mut grads, grad_theta.as_mut(), config.grad_clip);

            sgd_step(&mut params, &grads, &mut velocity, &sgd).map_err(|e| diverged(e.to_string()))?;
            if let Some(g) = &grad_theta {
                sgd.update_matrix(&mut transition.theta, g, &mut theta_velocity);
            }
            total += loss.value;
        }
        let mean = total / batches.len() as f64;
        debug!("epoch {epoch}: mean loss {mean:.6}");
        trace.push(mean);
    }
    if let Some(last) = trace.last() {
        info!("trained {} epochs, final mean loss {last:.6}", config.epochs);
    }

    let config_hash = config.hash();
    let store = extract_reference_store(&params, data, config, &config_hash)?;
    Ok(TrainResult {
        params,
        transition,
        loss_trace: trace,
        store,
        config_hash,
    })
}

/// Forwards the whole training set, splits the latent matrix once and builds
/// the store from the in-distribution part, keyed by the observed labels.
pub fn extract_reference_store(
    params: &MlpParams,
    data: &LabeledSet,
    config: &TrainConfig,
    config_hash: &str,
) -> Result<EmbeddingStore> {
    let cache = forward(params, &data.features)?;
    let decomposer = Decomposer {
        k_rank: config.rank_for(data.num_classes),
        n_iter: config.pi_iters,
        normalize: config.normalize,
    };
    let split = decomposer.split(cache.latent(), &mut stream(config.seed, Stream::Store))?;
    let mut store = build_store(&split.h_id, &data.noisy_labels, data.num_classes, config.cov_reg)?;
    store.meta.encoder_checksum = params.checksum();
    store.meta.config_hash = config_hash.to_string();
    Ok(store)
}
