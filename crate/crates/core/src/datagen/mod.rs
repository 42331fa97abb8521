//! Synthetic in-distribution mixtures, remote OOD sets, symmetric label noise
//! and the feature CSV format.

mod csv_io;

pub(crate) use csv_io::format_value;
pub use csv_io::{load_features_csv, load_ood_csv, save_features_csv, save_ood_csv};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::{norm2, qr_thin, Matrix};

/// Samples (rows) with clean and observed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub clean_labels: Vec<usize>,
    pub noisy_labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn new(
        features: Matrix,
        clean_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        ensure!(num_classes >= 2, "need at least 2 classes, got {}", num_classes);
        ensure!(
            clean_labels.len() == features.rows() && noisy_labels.len() == features.rows(),
            "label arrays ({}, {}) do not match {} samples",
            clean_labels.len(),
            noisy_labels.len(),
            features.rows()
        );
        ensure!(
            clean_labels
                .iter()
                .chain(&noisy_labels)
                .all(|&y| y < num_classes),
            "label outside [0, {})",
            num_classes
        );
        Ok(LabeledSet {
            features,
            clean_labels,
            noisy_labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Copy with `noisy_labels` redrawn from the clean labels.
    pub fn with_noise<R: Rng + ?Sized>(&self, spec: &NoiseSpec, rng: &mut R) -> Result<Self> {
        let noisy = inject_symmetric_noise(&self.clean_labels, spec, self.num_classes, rng)?;
        Ok(LabeledSet {
            noisy_labels: noisy,
            ..self.clone()
        })
    }

    /// Fraction of samples whose observed label differs from the clean one.
    pub fn noise_fraction(&self) -> f64 {
        let flipped = self
            .clean_labels
            .iter()
            .zip(&self.noisy_labels)
            .filter(|(a, b)| a != b)
            .count();
        flipped as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            rate,
        }
    }

    pub fn clean() -> Self {
        NoiseSpec::symmetric(0.0)
    }

    /// Rate must lie in `[0, 1)`; `1` is allowed only for two classes, where
    /// it deterministically swaps every label.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.rate),
            "noise rate {} outside [0, 1]",
            self.rate
        );
        ensure!(
            self.rate < 1.0 || num_classes == 2,
            "noise rate 1 is only defined for 2 classes"
        );
        Ok(())
    }
}

/// Each label is corrupted independently with probability `spec.rate`; a
/// corrupted label is replaced by one of the other `K − 1` classes uniformly.
pub fn inject_symmetric_noise<R: Rng + ?Sized>(
    labels: &[usize],
    spec: &NoiseSpec,
    num_classes: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    spec.validate(num_classes)?;
    ensure!(
        labels.iter().all(|&y| y < num_classes),
        "label outside [0, {})",
        num_classes
    );
    Ok(labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < spec.rate {
                let other = rng.random_range(0..num_classes - 1);
                if other >= y {
                    other + 1
                } else {
                    other
                }
            } else {
                y
            }
        })
        .collect())
}

/// Isotropic Gaussian classes around fixed means centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    /// K×d, one mean per row.
    pub means: Matrix,
    pub spread: f64,
    pub separation: f64,
}

impl GaussianMixture {
    /// Places `num_classes` means with minimum pairwise distance `separation`.
    ///
    /// With `K <= d` the means are the vertices of a regular simplex under a
    /// random rotation, so every pair sits at exactly `separation`. With
    /// `K > d` random directions are centred and rescaled to that minimum.
    pub fn new<R: Rng + ?Sized>(
        num_classes: usize,
        dim: usize,
        separation: f64,
        spread: f64,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(num_classes >= 2, "need at least 2 classes");
        ensure!(dim >= 2, "need dim >= 2");
        ensure!(separation > 0.0, "separation must be positive");
        ensure!(spread > 0.0, "spread must be positive");

        let k = num_classes;
        let raw = if k <= dim {
            let inv_k = 1.0 / k as f64;
            let simplex = Matrix::from_fn(k, dim, |c, j| {
                if j >= k {
                    0.0
                } else if j == c {
                    1.0 - inv_k
                } else {
                    -inv_k
                }
            });
            let gauss = Matrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
            let rotation = qr_thin(&gauss)?.q;
            simplex.matmul_t(&rotation)?
        } else {
            let mut m = Matrix::from_fn(k, dim, |_, _| StandardNormal.sample(rng));
            for j in 0..dim {
                let mean = (0..k).map(|c| m[(c, j)]).sum::<f64>() / k as f64;
                for c in 0..k {
                    m[(c, j)] -= mean;
                }
            }
            m
        };

        let min_dist = min_pairwise_distance(&raw);
        ensure!(min_dist > 0.0, "degenerate class means");
        Ok(GaussianMixture {
            means: raw.scale(separation / min_dist),
            spread,
            separation,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Largest distance from the origin (the mixture centre) to a class mean.
    pub fn mean_radius(&self) -> f64 {
        (0..self.num_classes())
            .map(|c| norm2(self.means.row(c)))
            .fold(0.0, f64::max)
    }

    /// `per_class` samples of each class, class-major, with clean = observed labels.
    pub fn sample<R: Rng + ?Sized>(&self, per_class: usize, rng: &mut R) -> Result<LabeledSet> {
        ensure!(per_class >= 1, "need at least one sample per class");
        let (k, d) = self.means.shape();
        let n = k * per_class;
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for c in 0..k {
            for _ in 0..per_class {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    data.push(self.means[(c, j)] + self.spread * z);
                }
                labels.push(c);
            }
        }
        LabeledSet::new(Matrix::from_vec(n, d, data)?, labels.clone(), labels, k)
    }

    /// Centre of the remote cluster used by [`OodMode::FarCluster`] along `direction`.
    pub fn far_center(&self, direction: &[f64]) -> Vec<f64> {
        let dist = self.mean_radius() + self.separation + FAR_RADIUS_SPREADS * self.spread
            + OOD_MIN_GAP_SPREADS * self.spread;
        direction.iter().map(|u| u * dist).collect()
    }

    /// Radius of the sphere used by [`OodMode::UniformShell`].
    pub fn shell_radius(&self) -> f64 {
        self.mean_radius() + OOD_MIN_GAP_SPREADS * self.spread + 0.5 * self.separation
    }
}

/// Far-cluster samples are truncated to this many spreads from their centre.
pub const FAR_RADIUS_SPREADS: f64 = 6.0;
/// Every OOD sample keeps at least this many spreads from every class mean.
pub const OOD_MIN_GAP_SPREADS: f64 = 3.0;

fn min_pairwise_distance(m: &Matrix) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..m.rows() {
        for b in a + 1..m.rows() {
            let d: f64 = m
                .row(a)
                .iter()
                .zip(m.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// `K=num_classes` classes of `per_class` samples each, as one labelled set.
pub fn make_gaussian_mixture<R: Rng + ?Sized>(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    rng: &mut R,
) -> Result<LabeledSet> {
    GaussianMixture::new(num_classes, dim, separation, spread, rng)?.sample(per_class, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodMode {
    /// One remote Gaussian, truncated at [`FAR_RADIUS_SPREADS`] spreads.
    FarCluster,
    /// Uniform on a sphere around the origin enclosing every class mean.
    UniformShell,
}

impl OodMode {
    pub fn name(&self) -> &'static str {
        match self {
            OodMode::FarCluster => "far_cluster",
            OodMode::UniformShell => "uniform_shell",
        }
    }
}

/// `n` OOD samples (n×d) whose support keeps at least
/// [`OOD_MIN_GAP_SPREADS`]·spread from every class mean of `mixture`.
pub fn make_ood_set<R: Rng + ?Sized>(
    mixture: &GaussianMixture,
    n: usize,
    mode: OodMode,
    rng: &mut R,
) -> Result<Matrix> {
    ensure!(n >= 1, "need at least one OOD sample");
    let d = mixture.dim();
    let spread = mixture.spread;
    let mut data = Vec::with_capacity(n * d);
    match mode {
        OodMode::FarCluster => {
            let center = mixture.far_center(&random_unit(d, rng));
            // keep the cluster compact enough that the truncation radius is rarely hit
            let sigma = spread * (3.0 / (d as f64).sqrt()).min(1.0);
            let limit = FAR_RADIUS_SPREADS * spread;
            for _ in 0..n {
                let offset = loop {
                    let z: Vec<f64> = (0..d)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(rng);
                            sigma * z
                        })
                        .collect();
                    if norm2(&z) <= limit {
                        break z;
                    }
                };
                data.extend(center.iter().zip(&offset).map(|(c, z)| c + z));
            }
        }
        OodMode::UniformShell => {
            let radius = mixture.shell_radius();
            for _ in 0..n {
                data.extend(random_unit(d, rng).into_iter().map(|u| u * radius));
            }
        }
    }
    Matrix::from_vec(n, d, data)
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = norm2(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
