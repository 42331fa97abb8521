//! Dense linear-algebra kernels: row-major matrices, Householder thin QR,
//! block power iteration for dominant subspaces, and the `‖·‖_{2,1}` norm.
//!
//! Everything is `f64` and deterministic; randomness enters only through an
//! explicit caller-supplied generator.

mod cholesky;
mod l21;
mod matrix;
mod power;
mod qr;

pub use cholesky::{cholesky, spd_inverse};
pub use l21::{l21_norm, l21_subgradient, L21_EPS};
pub use matrix::{dot, norm2, Matrix};
pub use power::approx_topk_singular_vectors;
pub use qr::{qr_thin, ThinQr};
