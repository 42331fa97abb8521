//! Label-noise-robust out-of-distribution detection.
//!
//! A small MLP encoder is trained with a noise-corrected classification loss
//! plus a column-sparsity penalty on the part of each batch's latent features
//! that falls outside a dominant low-rank subspace. The cleaned training
//! embeddings become a reference store for distance-based OOD scoring.

pub mod datagen;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod noisyloss;
pub mod ood;
pub mod rng;
pub mod trainer;

pub use error::{NoodleError, Result};
pub use linalg::Matrix;
