//! Reference-embedding store and OOD scoring functions.
//!
//! Every score follows the same orientation: higher means more in-distribution.

mod store_io;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, NoodleError, Result};
use crate::linalg::{cholesky, dot, norm2, spd_inverse, Matrix};

pub use store_io::{load_store, save_store, STORE_FORMAT, STORE_VERSION};

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_COV_REG: f64 = 1e-3;
/// Score of a zero-norm query: the diameter of the unit sphere.
pub const DEGENERATE_KNN_SCORE: f64 = -2.0;

const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub encoder_checksum: String,
    pub config_hash: String,
    pub cov_reg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    /// N×L, unit rows.
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
    /// K×L means of the normalized embeddings.
    pub class_means: Matrix,
    /// L×L regularized inverse of the pooled covariance.
    pub shared_precision: Matrix,
    pub meta: StoreMeta,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.rows()
    }

    /// Checks the unit-norm rows, label range and a symmetric positive-definite precision.
    pub fn validate(&self) -> Result<()> {
        let (n, l) = self.embeddings.shape();
        ensure!(n > 0, "store is empty");
        ensure!(self.labels.len() == n, "{} labels for {} embeddings", self.labels.len(), n);
        ensure!(self.class_means.cols() == l, "class means have width {}, expected {}", self.class_means.cols(), l);
        ensure!(
            self.shared_precision.shape() == (l, l),
            "precision must be {l}x{l}"
        );
        let k = self.num_classes();
        if let Some(bad) = self.labels.iter().find(|&&y| y >= k) {
            return Err(NoodleError::Contract(format!("store label {bad} out of range for {k} classes")));
        }
        for i in 0..n {
            let r = norm2(self.embeddings.row(i));
            ensure!((r - 1.0).abs() <= 1e-9, "embedding row {i} has norm {r}");
        }
        let asym = self
            .shared_precision
            .sub(&self.shared_precision.transpose())?
            .max_abs();
        ensure!(asym <= 1e-9, "precision is not symmetric ({asym})");
        cholesky(&self.shared_precision)?;
        Ok(())
    }
}

/// Builds the reference store from cleaned training features `h_id` (L×N).
///
/// Columns are ℓ2-normalized; zero-norm columns are dropped with a warning.
/// The pooled covariance gets a ridge of `cov_reg·tr(Σ)/L` before inversion.
pub fn build_store(h_id: &Matrix, labels: &[usize], num_classes: usize, cov_reg: f64) -> Result<EmbeddingStore> {
    let (l, n) = h_id.shape();
    ensure!(labels.len() == n, "{} labels for {} feature columns", labels.len(), n);
    ensure!(num_classes >= 2, "need at least 2 classes");
    ensure!(cov_reg > 0.0 && cov_reg.is_finite(), "cov_reg must be positive, got {}", cov_reg);
    ensure!(l > 0, "latent dimension is zero");
    if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(NoodleError::Contract(format!("label {bad} out of range for {num_classes} classes")));
    }

    let mut rows = Vec::with_capacity(n * l);
    let mut kept = Vec::with_capacity(n);
    let mut dropped = 0usize;
    for (j, &label) in labels.iter().enumerate() {
        let col = h_id.column(j);
        let r = norm2(&col);
        if r <= ZERO_NORM_EPS || !r.is_finite() {
            dropped += 1;
            continue;
        }
        rows.extend(col.iter().map(|v| v / r));
        kept.push(label);
    }
    if dropped > 0 {
        warn!("dropped {dropped} zero-norm reference embeddings");
    }
    let n_kept = kept.len();
    ensure!(
        n_kept > num_classes,
        "store needs at least {} embeddings, got {}",
        num_classes + 1,
        n_kept
    );
    let embeddings = Matrix::from_vec(n_kept, l, rows)?;

    let mut means = Matrix::zeros(num_classes, l);
    let mut counts = vec![0usize; num_classes];
    for (i, &y) in kept.iter().enumerate() {
        counts[y] += 1;
        for (m, v) in means.row_mut(y).iter_mut().zip(embeddings.row(i)) {
            *m += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(NoodleError::EmptyClass(c));
        }
        for m in means.row_mut(c) {
            *m /= count as f64;
        }
    }

    let mut cov = Matrix::zeros(l, l);
    let mut centered = vec![0.0; l];
    for (i, &y) in kept.iter().enumerate() {
        for ((c, e), m) in centered.iter_mut().zip(embeddings.row(i)).zip(means.row(y)) {
            *c = e - m;
        }
        for a in 0..l {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for (dst, cb) in cov.row_mut(a).iter_mut().zip(&centered) {
                *dst += ca * cb;
            }
        }
    }
    let cov = cov.scale(1.0 / n_kept as f64);
    let ridge = cov_reg * (cov.trace() / l as f64).max(1e-12);
    let mut reg = cov;
    for a in 0..l {
        reg[(a, a)] += ridge;
    }
    let precision = spd_inverse(&reg)?;

    Ok(EmbeddingStore {
        embeddings,
        labels: kept,
        class_means: means,
        shared_precision: precision,
        meta: StoreMeta {
            cov_reg,
            ..StoreMeta::default()
        },
    })
}

fn normalized(query: &[f64]) -> Option<Vec<f64>> {
    let r = norm2(query);
    (r > ZERO_NORM_EPS && r.is_finite()).then(|| query.iter().map(|v| v / r).collect())
}

/// Negated distance from the normalized query to its `k`-th nearest stored
/// embedding (exact search). `k` is clamped to the store size.
pub fn knn_score(store: &EmbeddingStore, query: &[f64], k: usize) -> Result<f64> {
    ensure!(!store.is_empty(), "store is empty");
    ensure!(k >= 1, "k must be positive");
    ensure!(query.len() == store.dim(), "query has length {}, store width is {}", query.len(), store.dim());
    let Some(u) = normalized(query) else {
        return Ok(DEGENERATE_KNN_SCORE);
    };
    let mut dists: Vec<f64> = (0..store.len())
        .map(|i| {
            store
                .embeddings
                .row(i)
                .iter()
                .zip(&u)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let idx = k.min(dists.len()) - 1;
    let (_, kth, _) = dists.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(-*kth)
}

pub fn mahalanobis_score(store: &EmbeddingStore, query: &[f64]) -> Result<f64> {
    ensure!(query.len() == store.dim(), "query has length {}, store width is {}", query.len(), store.dim());
    let u = normalized(query).unwrap_or_else(|| query.to_vec());
    let p = &store.shared_precision;
    let mut best = f64::INFINITY;
    let mut diff = vec![0.0; u.len()];
    for c in 0..store.num_classes() {
        for ((d, a), m) in diff.iter_mut().zip(&u).zip(store.class_means.row(c)) {
            *d = a - m;
        }
        let form: f64 = (0..diff.len()).map(|a| diff[a] * dot(p.row(a), &diff)).sum();
        best = best.min(form);
    }
    Ok(-best)
}

pub fn msp_score(probs: &[f64]) -> f64 {
    probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log Σ exp(z)`, max-shifted.
pub fn energy_score(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// The `⌈tpr·n⌉`-th largest score, so at least that many scores satisfy `s ≥ τ`.
pub fn select_threshold(id_scores: &[f64], tpr: f64) -> Result<f64> {
    ensure!(!id_scores.is_empty(), "no validation scores");
    ensure!(tpr > 0.0 && tpr <= 1.0, "tpr must lie in (0, 1], got {}", tpr);
    let n = id_scores.len();
    let m = ((tpr * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = id_scores.to_vec();
    let (_, tau, _) = sorted.select_nth_unstable_by(m - 1, |a, b| b.total_cmp(a));
    Ok(*tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Id,
    Ood,
}

pub fn detect(score: f64, tau: f64) -> Decision {
    if score >= tau {
        Decision::Id
    } else {
        Decision::Ood
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Knn,
    Mahalanobis,
    Msp,
    Energy,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [ScoreKind::Knn, ScoreKind::Mahalanobis, ScoreKind::Msp, ScoreKind::Energy];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Knn => "knn",
            ScoreKind::Mahalanobis => "mahalanobis",
            ScoreKind::Msp => "msp",
            ScoreKind::Energy => "energy",
        }
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown score kind {s:?} (expected knn, mahalanobis, msp or energy)"))
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
