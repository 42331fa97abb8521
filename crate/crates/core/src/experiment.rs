//! Experiment specification, data assembly, scoring and multi-seed sweeps.
//!
//! A spec is one JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "dataset": { "synthetic": { "num_classes": 4, "dim": 32 } },
//!   "noise": { "kind": "symmetric", "rate": 0.4 },
//!   "train": { "epochs": 30 },
//!   "methods": [ { "name": "noodle", "loss_kind": "cm", "lambda": 0.001, "score": "knn", "k": 50 } ],
//!   "seeds": [0, 1, 2],
//!   "output_dir": "runs/demo"
//! }
//! ```
//!
//! Omitted fields take their defaults; unrecognized keys are rejected.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    load_features_csv, load_ood_csv, GaussianMixture, LabeledSet, NoiseSpec, OodMode,
};
use crate::error::{NoodleError, Result};
use crate::eval::{id_accuracy, EvalReport, ReportFormat, ReportHeader};
use crate::linalg::Matrix;
use crate::model::{argmax_columns, forward, MlpParams};
use crate::noisyloss::LossKind;
use crate::ood::{energy_score, knn_score, mahalanobis_score, msp_score, EmbeddingStore, ScoreKind, DEFAULT_K};
use crate::rng::{indexed_stream, stream, Stream};
use crate::trainer::{train, TrainConfig, TrainResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSpec {
    /// Defaults to the mode name.
    #[serde(default)]
    pub name: Option<String>,
    pub mode: OodMode,
    pub n: usize,
}

impl OodSpec {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.mode.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub spread: f64,
    pub ood: Vec<OodSpec>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            dim: 32,
            train_per_class: 500,
            val_per_class: 100,
            test_per_class: 200,
            separation: 8.0,
            spread: 1.0,
            ood: vec![OodSpec {
                name: None,
                mode: OodMode::FarCluster,
                n: 500,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOod {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSpec {
    pub train: PathBuf,
    #[serde(default)]
    pub val: Option<PathBuf>,
    pub test: PathBuf,
    pub ood: Vec<CsvOod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Csv(CsvSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSpec {
    pub name: String,
    pub loss_kind: LossKind,
    pub lambda: f64,
    pub score: ScoreKind,
    pub k: usize,
}

impl Default for MethodSpec {
    fn default() -> Self {
        MethodSpec {
            name: "noodle".into(),
            loss_kind: LossKind::Cm,
            lambda: 0.001,
            score: ScoreKind::Knn,
            k: DEFAULT_K,
        }
    }
}

impl MethodSpec {
    /// The training configuration for this method under `seed`.
    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            loss_kind: self.loss_kind,
            lambda: self.lambda,
            seed,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            schema_version: SCHEMA_VERSION,
            dataset: DatasetSpec::default(),
            noise: NoiseSpec::symmetric(0.4),
            train: TrainConfig::default(),
            methods: vec![MethodSpec::default()],
            seeds: vec![0],
            output_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ExperimentSpec = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| NoodleError::Config(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(NoodleError::UnknownKeys(unknown));
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NoodleError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NoodleError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        for m in &self.methods {
            if m.k == 0 {
                return bad(format!("method '{}': k must be positive", m.name));
            }
            if !(m.lambda >= 0.0 && m.lambda.is_finite()) {
                return bad(format!("method '{}': lambda must be nonnegative", m.name));
            }
            m.train_config(&self.train, 0).validate()?;
        }
        match &self.dataset {
            DatasetSpec::Synthetic(s) => {
                if s.num_classes < 2 || s.dim < 2 {
                    return bad("synthetic data needs num_classes >= 2 and dim >= 2".into());
                }
                if s.train_per_class == 0 || s.val_per_class == 0 || s.test_per_class == 0 {
                    return bad("per-class sample counts must be positive".into());
                }
                if !(s.separation > 0.0 && s.spread > 0.0) {
                    return bad("separation and spread must be positive".into());
                }
                if s.ood.is_empty() || s.ood.iter().any(|o| o.n == 0) {
                    return bad("need at least one non-empty OOD set".into());
                }
                self.noise
                    .validate(s.num_classes)
                    .map_err(|e| NoodleError::Config(e.to_string()))?;
            }
            DatasetSpec::Csv(c) => {
                if c.ood.is_empty() {
                    return bad("need at least one OOD file".into());
                }
                let paths = [Some(&c.train), c.val.as_ref(), Some(&c.test)];
                for p in paths.into_iter().flatten().chain(c.ood.iter().map(|o| &o.path)) {
                    if !p.is_file() {
                        return bad(format!("data file {} does not exist", p.display()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Everything one run reads: noisy training set, clean validation and test
/// sets, and named OOD feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub train: LabeledSet,
    pub val: Option<LabeledSet>,
    pub test: LabeledSet,
    pub ood: Vec<(String, Matrix)>,
}

/// Draws all synthetic sets for `seed`; only the training labels are corrupted.
pub fn generate_synthetic(spec: &SyntheticSpec, noise: &NoiseSpec, seed: u64) -> Result<DataBundle> {
    let mixture = GaussianMixture::new(
        spec.num_classes,
        spec.dim,
        spec.separation,
        spec.spread,
        &mut stream(seed, Stream::ClassMeans),
    )?;
    let train = mixture
        .sample(spec.train_per_class, &mut stream(seed, Stream::TrainSamples))?
        .with_noise(noise, &mut stream(seed, Stream::Noise))?;
    let val = mixture.sample(spec.val_per_class, &mut stream(seed, Stream::ValSamples))?;
    let test = mixture.sample(spec.test_per_class, &mut stream(seed, Stream::TestSamples))?;
    let ood = spec
        .ood
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let x = crate::datagen::make_ood_set(&mixture, o.n, o.mode, &mut indexed_stream(seed, Stream::Ood, i as u64))?;
            Ok((o.display_name(), x))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DataBundle {
        train,
        val: Some(val),
        test,
        ood,
    })
}

pub fn load_csv_bundle(spec: &CsvSpec) -> Result<DataBundle> {
    let train = load_features_csv(&spec.train, None)?;
    let k = Some(train.num_classes);
    let val = spec.val.as_deref().map(|p| load_features_csv(p, k)).transpose()?;
    let test = load_features_csv(&spec.test, k)?;
    let ood = spec
        .ood
        .iter()
        .map(|o| Ok((o.name.clone(), load_ood_csv(&o.path)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DataBundle { train, val, test, ood })
}

pub fn build_bundle(dataset: &DatasetSpec, noise: &NoiseSpec, seed: u64) -> Result<DataBundle> {
    match dataset {
        DatasetSpec::Synthetic(s) => generate_synthetic(s, noise, seed),
        DatasetSpec::Csv(c) => load_csv_bundle(c),
    }
}

/// Scores every row of `x` (n×d); higher means more in-distribution.
pub fn score_features(
    params: &MlpParams,
    store: &EmbeddingStore,
    x: &Matrix,
    kind: ScoreKind,
    k: usize,
) -> Result<Vec<f64>> {
    let cache = forward(params, x)?;
    let n = x.rows();
    (0..n)
        .map(|j| match kind {
            ScoreKind::Knn => knn_score(store, &cache.latent().column(j), k),
            ScoreKind::Mahalanobis => mahalanobis_score(store, &cache.latent().column(j)),
            ScoreKind::Msp => Ok(msp_score(&cache.probs.column(j))),
            ScoreKind::Energy => Ok(energy_score(&cache.logits.column(j))),
        })
        .collect()
}

pub fn predict(params: &MlpParams, x: &Matrix) -> Result<Vec<usize>> {
    Ok(argmax_columns(&forward(params, x)?.probs))
}

/// Scores the test set and every OOD set with the method's score and
/// assembles the report. Validation scores, when given, fix the deployment threshold.
pub fn evaluate_model(
    params: &MlpParams,
    store: &EmbeddingStore,
    test: &LabeledSet,
    val: Option<&LabeledSet>,
    ood: &[(String, Matrix)],
    method: &MethodSpec,
    header: ReportHeader,
) -> Result<EvalReport> {
    let score = |x: &Matrix| score_features(params, store, x, method.score, method.k);
    let id_scores = score(&test.features)?;
    let val_scores = val.map(|v| score(&v.features)).transpose()?;
    let ood_scores = ood
        .iter()
        .map(|(name, x)| Ok((name.clone(), score(x)?)))
        .collect::<Result<Vec<_>>>()?;
    let acc = id_accuracy(&predict(params, &test.features)?, &test.clean_labels)?;
    EvalReport::build(header, id_scores, ood_scores, acc, val_scores.as_deref())
}

/// Report provenance: the effective training configuration plus the method.
pub fn report_header(method: &MethodSpec, config: &TrainConfig) -> ReportHeader {
    ReportHeader {
        method: method.name.clone(),
        score_kind: method.score.name().to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        config: serde_json::json!({ "train": config, "method": method }),
    }
}

pub const RUN_RECORD_FORMAT: &str = "noodle-run";

/// The effective training configuration and method of one training run,
/// persisted next to its checkpoint so evaluation can reproduce the report header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub format: String,
    pub train: TrainConfig,
    pub method: MethodSpec,
}

impl RunRecord {
    pub fn new(train: TrainConfig, method: MethodSpec) -> Self {
        RunRecord {
            format: RUN_RECORD_FORMAT.to_string(),
            train,
            method,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("run record serializes") + "\n";
        std::fs::write(path, text).map_err(|e| NoodleError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NoodleError::io(path, e))?;
        let rec: RunRecord = serde_json::from_str(&text).map_err(|e| NoodleError::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if rec.format != RUN_RECORD_FORMAT {
            return Err(NoodleError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected format {RUN_RECORD_FORMAT}"),
            });
        }
        Ok(rec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub train: TrainResult,
    pub report: EvalReport,
}

/// One (method, seed) cell: data, training, evaluation.
pub fn run_cell(spec: &ExperimentSpec, method: &MethodSpec, seed: u64) -> Result<CellRun> {
    let data = build_bundle(&spec.dataset, &spec.noise, seed)?;
    run_cell_on(&data, &spec.train, method, seed)
}

pub fn run_cell_on(data: &DataBundle, base: &TrainConfig, method: &MethodSpec, seed: u64) -> Result<CellRun> {
    let config = method.train_config(base, seed);
    let trained = train(&data.train, &config)?;
    let report = evaluate_model(
        &trained.params,
        &trained.store,
        &data.test,
        data.val.as_ref(),
        &data.ood,
        method,
        report_header(method, &config),
    )?;
    Ok(CellRun {
        train: trained,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub seed: u64,
    pub fpr95: Option<f64>,
    pub auroc: Option<f64>,
    pub id_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub failed: usize,
    pub fpr95: Option<Stat>,
    pub auroc: Option<Stat>,
    pub id_accuracy: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub schema_version: u32,
    pub methods: Vec<MethodSummary>,
    pub cells: Vec<CellSummary>,
    pub spec: ExperimentSpec,
}

pub const COMPARISON_HEADER: &str =
    "method,runs,failed,fpr95_mean,fpr95_std,auroc_mean,auroc_std,id_accuracy_mean,id_accuracy_std";

impl ExperimentOutcome {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARISON_HEADER}\n");
        let fmt = |s: Option<Stat>| s.map_or_else(|| ",".to_string(), |s| format!("{},{}", s.mean, s.std));
        for m in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.method,
                m.runs,
                m.failed,
                fmt(m.fpr95),
                fmt(m.auroc),
                fmt(m.id_accuracy)
            ));
        }
        out
    }

    pub fn any_failed(&self) -> bool {
        self.methods.iter().any(|m| m.failed > 0)
    }
}

/// Runs every (method, seed) cell, in parallel across cells. Failed cells are
/// recorded and the sweep continues. When `output_dir` is set, per-cell
/// reports and `comparison.{csv,json}` are written there.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let shared = match &spec.dataset {
        DatasetSpec::Csv(c) => Some(load_csv_bundle(c)?),
        DatasetSpec::Synthetic(_) => None,
    };
    if let Some(dir) = &spec.output_dir {
        std::fs::create_dir_all(dir.join("cells")).map_err(|e| NoodleError::io(dir, e))?;
    }
    let cells: Vec<(usize, u64)> = (0..spec.methods.len())
        .flat_map(|m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results: Vec<(usize, u64, Result<EvalReport>)> = cells
        .par_iter()
        .map(|&(m, seed)| {
            let method = &spec.methods[m];
            let run = match &shared {
                Some(data) => run_cell_on(data, &spec.train, method, seed),
                None => run_cell(spec, method, seed),
            };
            let report = run.and_then(|r| {
                if let Some(dir) = &spec.output_dir {
                    let path = dir.join("cells").join(format!("{}_seed{}.json", method.name, seed));
                    crate::eval::emit_report(&r.report, &path, ReportFormat::Json)?;
                }
                Ok(r.report)
            });
            if let Err(e) = &report {
                warn!("cell {} seed {} failed: {e}", method.name, seed);
            }
            (m, seed, report)
        })
        .collect();

    let cell_summaries: Vec<CellSummary> = results
        .iter()
        .map(|(m, seed, r)| {
            let method = spec.methods[*m].name.clone();
            match r {
                Ok(rep) => CellSummary {
                    method,
                    seed: *seed,
                    fpr95: Some(rep.average.fpr95),
                    auroc: Some(rep.average.auroc),
                    id_accuracy: Some(rep.id_accuracy),
                    error: None,
                },
                Err(e) => CellSummary {
                    method,
                    seed: *seed,
                    fpr95: None,
                    auroc: None,
                    id_accuracy: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let methods = spec
        .methods
        .iter()
        .map(|m| {
            let mine: Vec<&CellSummary> = cell_summaries.iter().filter(|c| c.method == m.name).collect();
            let collect = |f: fn(&CellSummary) -> Option<f64>| -> Vec<f64> { mine.iter().filter_map(|c| f(c)).collect() };
            MethodSummary {
                method: m.name.clone(),
                runs: mine.len(),
                failed: mine.iter().filter(|c| c.error.is_some()).count(),
                fpr95: Stat::of(&collect(|c| c.fpr95)),
                auroc: Stat::of(&collect(|c| c.auroc)),
                id_accuracy: Stat::of(&collect(|c| c.id_accuracy)),
            }
        })
        .collect();
    let outcome = ExperimentOutcome {
        schema_version: SCHEMA_VERSION,
        methods,
        cells: cell_summaries,
        spec: spec.clone(),
    };
    if let Some(dir) = &spec.output_dir {
        let csv = dir.join("comparison.csv");
        std::fs::write(&csv, outcome.to_csv()).map_err(|e| NoodleError::io(&csv, e))?;
        let json = dir.join("comparison.json");
        let text = serde_json::to_string_pretty(&outcome).expect("outcome serializes") + "\n";
        std::fs::write(&json, text).map_err(|e| NoodleError::io(&json, e))?;
        info!("wrote {} and {}", csv.display(), json.display());
    }
    Ok(outcome)
}
