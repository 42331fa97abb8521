//! Detection and classification metrics and the report files built from them.
//!
//! Report JSON (`format = "noodle-report"`, `version = 1`) keeps the raw ID and
//! OOD score arrays so every metric can be recomputed from the file. The CSV
//! variant has the header `method,ood_dataset,fpr95,auroc,id_accuracy,seed`,
//! one row per OOD dataset followed by an `Average` row.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, NoodleError, Result};
use crate::ood::select_threshold;

pub const DEFAULT_TPR: f64 = 0.95;
pub const REPORT_FORMAT: &str = "noodle-report";
pub const REPORT_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "method,ood_dataset,fpr95,auroc,id_accuracy,seed";
pub const AVERAGE_ROW: &str = "Average";

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    ensure!(!scores.is_empty(), "{name} scores are empty");
    ensure!(scores.iter().all(|s| s.is_finite()), "{name} scores contain non-finite values");
    Ok(())
}

/// Fraction of OOD scores at or above the threshold that keeps `tpr` of the ID scores.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64> {
    check_scores("ID", id_scores)?;
    check_scores("OOD", ood_scores)?;
    let tau = select_threshold(id_scores, tpr)?;
    let passed = ood_scores.iter().filter(|&&s| s >= tau).count();
    Ok(passed as f64 / ood_scores.len() as f64)
}

/// Twice the Mann–Whitney U of `a` over `b`, with ties counted as one half.
fn twice_u(a: &[f64], b: &[f64]) -> u128 {
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|&s| (s, true))
        .chain(b.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        // 1-based ranks start+1..=end; twice their mean is start + 1 + end
        let in_a = all[start..end].iter().filter(|x| x.1).count() as u128;
        twice_rank_sum += in_a * (start + 1 + end) as u128;
        start = end;
    }
    let n_a = a.len() as u128;
    twice_rank_sum - n_a * (n_a + 1)
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counting one half. `auroc(a, b) + auroc(b, a) == 1` holds exactly.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores("ID", id_scores)?;
    check_scores("OOD", ood_scores)?;
    let total = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    let u = twice_u(id_scores, ood_scores);
    let complement = total - u;
    Ok(if u <= complement {
        u as f64 / total as f64
    } else {
        1.0 - complement as f64 / total as f64
    })
}

pub fn id_accuracy(predicted: &[usize], clean: &[usize]) -> Result<f64> {
    ensure!(
        predicted.len() == clean.len(),
        "{} predictions for {} labels",
        predicted.len(),
        clean.len()
    );
    ensure!(!clean.is_empty(), "no labels");
    let hits = predicted.iter().zip(clean).filter(|(p, c)| p == c).count();
    Ok(hits as f64 / clean.len() as f64)
}

/// Metrics of one ID/OOD pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub ood_dataset: String,
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
    pub fpr95: f64,
    pub auroc: f64,
    pub id_accuracy: f64,
    pub config_hash: String,
    pub seed: u64,
}

impl ScoreReport {
    pub fn compute(
        ood_dataset: &str,
        id_scores: Vec<f64>,
        ood_scores: Vec<f64>,
        id_accuracy: f64,
        config_hash: &str,
        seed: u64,
    ) -> Result<Self> {
        Ok(ScoreReport {
            ood_dataset: ood_dataset.to_string(),
            fpr95: fpr_at_tpr(&id_scores, &ood_scores, DEFAULT_TPR)?,
            auroc: auroc(&id_scores, &ood_scores)?,
            id_scores,
            ood_scores,
            id_accuracy,
            config_hash: config_hash.to_string(),
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodResult {
    pub name: String,
    pub ood_scores: Vec<f64>,
    pub fpr95: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub fpr95: f64,
    pub auroc: f64,
}

/// Evaluation of one trained model against every OOD set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub score_kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub tpr: f64,
    /// Deployment threshold from ID validation scores, when available.
    pub val_threshold: Option<f64>,
    pub id_accuracy: f64,
    pub id_scores: Vec<f64>,
    pub datasets: Vec<OodResult>,
    pub average: AverageMetrics,
}

/// Fields shared by every row of an [`EvalReport`].
#[derive(Debug, Clone)]
pub struct ReportHeader {
    pub method: String,
    pub score_kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn build(
        header: ReportHeader,
        id_scores: Vec<f64>,
        ood_sets: Vec<(String, Vec<f64>)>,
        id_accuracy: f64,
        val_scores: Option<&[f64]>,
    ) -> Result<Self> {
        ensure!(!ood_sets.is_empty(), "no OOD datasets to evaluate");
        let mut datasets = Vec::with_capacity(ood_sets.len());
        for (name, ood_scores) in ood_sets {
            datasets.push(OodResult {
                fpr95: fpr_at_tpr(&id_scores, &ood_scores, DEFAULT_TPR)?,
                auroc: auroc(&id_scores, &ood_scores)?,
                name,
                ood_scores,
            });
        }
        let val_threshold = val_scores.map(|v| select_threshold(v, DEFAULT_TPR)).transpose()?;
        let n = datasets.len() as f64;
        let average = AverageMetrics {
            fpr95: datasets.iter().map(|d| d.fpr95).sum::<f64>() / n,
            auroc: datasets.iter().map(|d| d.auroc).sum::<f64>() / n,
        };
        Ok(EvalReport {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            method: header.method,
            score_kind: header.score_kind,
            seed: header.seed,
            config_hash: header.config_hash,
            config: header.config,
            tpr: DEFAULT_TPR,
            val_threshold,
            id_accuracy,
            id_scores,
            datasets,
            average,
        })
    }

    /// Per-dataset view.
    pub fn score_reports(&self) -> Vec<ScoreReport> {
        self.datasets
            .iter()
            .map(|d| ScoreReport {
                ood_dataset: d.name.clone(),
                id_scores: self.id_scores.clone(),
                ood_scores: d.ood_scores.clone(),
                fpr95: d.fpr95,
                auroc: d.auroc,
                id_accuracy: self.id_accuracy,
                config_hash: self.config_hash.clone(),
                seed: self.seed,
            })
            .collect()
    }

    /// Recomputes every metric from the stored score arrays and compares bitwise.
    pub fn verify(&self) -> Result<()> {
        for d in &self.datasets {
            let fpr = fpr_at_tpr(&self.id_scores, &d.ood_scores, self.tpr)?;
            let au = auroc(&self.id_scores, &d.ood_scores)?;
            if fpr.to_bits() != d.fpr95.to_bits() || au.to_bits() != d.auroc.to_bits() {
                return Err(NoodleError::Contract(format!(
                    "stored metrics for '{}' do not match the stored scores",
                    d.name
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        let mut row = |name: &str, fpr: f64, au: f64| {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.method, name, fpr, au, self.id_accuracy, self.seed
            ));
        };
        for d in &self.datasets {
            row(&d.name, d.fpr95, d.auroc);
        }
        row(AVERAGE_ROW, self.average.fpr95, self.average.auroc);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NoodleError::io(path, e))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|e| NoodleError::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if report.format != REPORT_FORMAT || report.version != REPORT_VERSION {
            return Err(NoodleError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("not a {REPORT_FORMAT} version {REPORT_VERSION} file"),
            });
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    let mut file = std::fs::File::create(path).map_err(|e| NoodleError::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| NoodleError::io(path, e))
}
