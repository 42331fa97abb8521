//! Parameter checkpoint: a JSON document
//!
//! ```text
//! { "format": "noodle-checkpoint", "version": 1,
//!   "architecture": { input_dim, hidden_widths, latent_dim, num_classes },
//!   "params": { layer_weights: [{rows, cols, data}], layer_biases, head_weight, head_bias },
//!   "transition_theta": {rows, cols, data} | null,
//!   "config_hash": "<sha256 hex>", "param_checksum": "<sha256 hex>" }
//! ```
//! Matrices are row-major; floats round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, MlpParams};
use crate::error::{ensure, NoodleError, Result};
use crate::linalg::Matrix;

pub const CHECKPOINT_FORMAT: &str = "noodle-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub params: MlpParams,
    pub transition_theta: Option<Matrix>,
    pub config_hash: String,
    pub param_checksum: String,
}

impl Checkpoint {
    pub fn new(params: MlpParams, transition_theta: Option<Matrix>, config_hash: String) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture: params.architecture(),
            param_checksum: params.checksum(),
            params,
            transition_theta,
            config_hash,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| NoodleError::Config(format!("serializing checkpoint: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| NoodleError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NoodleError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| NoodleError::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.format == CHECKPOINT_FORMAT,
            "not a checkpoint (format {:?})",
            self.format
        );
        ensure!(
            self.version == CHECKPOINT_VERSION,
            "unsupported checkpoint version {}",
            self.version
        );
        self.params.validate()?;
        ensure!(
            self.params.architecture() == self.architecture,
            "checkpoint architecture does not match its parameters"
        );
        ensure!(
            self.params.checksum() == self.param_checksum,
            "checkpoint parameter checksum mismatch"
        );
        if let Some(theta) = &self.transition_theta {
            let k = self.architecture.num_classes;
            ensure!(theta.shape() == (k, k), "transition logits must be {}x{}", k, k);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_and_load_is_exact() {
        let arch = Architecture::default_for(5, 3);
        let params = MlpParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let theta = Matrix::from_fn(3, 3, |i, j| if i == j { 4.59511985013459 } else { 0.0 });
        let ckpt = Checkpoint::new(params, Some(theta), "abc".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn tampered_checkpoint_is_rejected() {
        let arch = Architecture::default_for(2, 2);
        let params = MlpParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut ckpt = Checkpoint::new(params, None, String::new());
        ckpt.params.head_bias[0] = 1.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
