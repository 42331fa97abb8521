//! Store persistence: embeddings and labels in `<stem>.csv` (header
//! `label,e0,...,e{L-1}`), everything else in the JSON sidecar `<stem>.json`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingStore, StoreMeta};
use crate::datagen::format_value;
use crate::error::{NoodleError, Result};
use crate::linalg::Matrix;

pub const STORE_FORMAT: &str = "noodle-store";
pub const STORE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format: String,
    version: u32,
    embeddings_file: String,
    num_embeddings: usize,
    dim: usize,
    num_classes: usize,
    class_means: Matrix,
    shared_precision: Matrix,
    meta: StoreMeta,
}

fn embeddings_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("csv")
}

/// Writes `json_path` and the embeddings CSV beside it (same stem, `.csv`).
pub fn save_store(store: &EmbeddingStore, json_path: &Path) -> Result<()> {
    let csv_path = embeddings_path(json_path);
    let io_err = |e| NoodleError::io(&csv_path, e);
    let mut out = BufWriter::new(File::create(&csv_path).map_err(io_err)?);
    let mut header = String::from("label");
    for j in 0..store.dim() {
        header.push_str(&format!(",e{j}"));
    }
    writeln!(out, "{header}").map_err(io_err)?;
    for (i, y) in store.labels.iter().enumerate() {
        let mut line = y.to_string();
        for v in store.embeddings.row(i) {
            line.push(',');
            line.push_str(&format_value(*v));
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;

    let sidecar = Sidecar {
        format: STORE_FORMAT.to_string(),
        version: STORE_VERSION,
        embeddings_file: csv_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        num_embeddings: store.len(),
        dim: store.dim(),
        num_classes: store.num_classes(),
        class_means: store.class_means.clone(),
        shared_precision: store.shared_precision.clone(),
        meta: store.meta.clone(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("store sidecar serializes");
    std::fs::write(json_path, text + "\n").map_err(|e| NoodleError::io(json_path, e))
}

pub fn load_store(json_path: &Path) -> Result<EmbeddingStore> {
    let text = std::fs::read_to_string(json_path).map_err(|e| NoodleError::io(json_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| NoodleError::Parse {
        path: json_path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    if sidecar.format != STORE_FORMAT || sidecar.version != STORE_VERSION {
        return Err(NoodleError::Parse {
            path: json_path.to_path_buf(),
            line: 1,
            message: format!(
                "expected {STORE_FORMAT} version {STORE_VERSION}, found {} version {}",
                sidecar.format, sidecar.version
            ),
        });
    }
    let csv_path = json_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&sidecar.embeddings_file);
    let (labels, embeddings) = read_embeddings(&csv_path, sidecar.dim)?;
    let store = EmbeddingStore {
        embeddings,
        labels,
        class_means: sidecar.class_means,
        shared_precision: sidecar.shared_precision,
        meta: sidecar.meta,
    };
    if store.len() != sidecar.num_embeddings || store.num_classes() != sidecar.num_classes {
        return Err(NoodleError::Parse {
            path: json_path.to_path_buf(),
            line: 1,
            message: "sidecar counts do not match the stored data".to_string(),
        });
    }
    store.validate()?;
    Ok(store)
}

fn read_embeddings(path: &Path, dim: usize) -> Result<(Vec<usize>, Matrix)> {
    let parse_err = |line: u64, message: String| NoodleError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => NoodleError::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let expected = std::iter::once("label".to_string()).chain((0..dim).map(|j| format!("e{j}")));
    if header.len() != dim + 1 || header.iter().ne(expected.collect::<Vec<_>>().iter().map(String::as_str)) {
        return Err(parse_err(1, format!("expected header label,e0,...,e{}", dim.saturating_sub(1))));
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(parse_err(line, format!("expected {} columns, found {}", dim + 1, record.len())));
        }
        labels.push(
            record[0]
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad label {:?}", &record[0])))?,
        );
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad value {field:?}")))?;
            data.push(v);
        }
    }
    let n = labels.len();
    Ok((labels, Matrix::from_vec(n, dim, data)?))
}
