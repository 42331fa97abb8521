//! Feature CSV files: header `label,noisy_label,f0,...,f{d-1}`, one sample per
//! row, features in scientific notation with 17 significant digits (exact
//! round trip). OOD files carry `-1` in both label columns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::LabeledSet;
use crate::error::{NoodleError, Result};
use crate::linalg::Matrix;

const OOD_LABEL: i64 = -1;

pub(crate) fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_features_csv(set: &LabeledSet, path: &Path) -> Result<()> {
    let labels: Vec<(i64, i64)> = set
        .clean_labels
        .iter()
        .zip(&set.noisy_labels)
        .map(|(&c, &n)| (c as i64, n as i64))
        .collect();
    write_rows(path, &set.features, &labels)
}

pub fn save_ood_csv(features: &Matrix, path: &Path) -> Result<()> {
    let labels = vec![(OOD_LABEL, OOD_LABEL); features.rows()];
    write_rows(path, features, &labels)
}

fn write_rows(path: &Path, features: &Matrix, labels: &[(i64, i64)]) -> Result<()> {
    let io_err = |e| NoodleError::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut header = String::from("label,noisy_label");
    for j in 0..features.cols() {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(out, "{header}").map_err(io_err)?;
    for (i, (clean, noisy)) in labels.iter().enumerate() {
        let mut line = format!("{clean},{noisy}");
        for v in features.row(i) {
            line.push(',');
            line.push_str(&format_value(*v));
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

struct RawRows {
    labels: Vec<(i64, i64)>,
    features: Matrix,
}

fn read_rows(path: &Path) -> Result<RawRows> {
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

    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let dim = header.len().saturating_sub(2);
    let expected: Vec<String> = ["label".to_string(), "noisy_label".to_string()]
        .into_iter()
        .chain((0..dim).map(|j| format!("f{j}")))
        .collect();
    if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            1,
            format!("expected header label,noisy_label,f0,...; got {:?}", header.as_slice()),
        ));
    }

    let mut labels = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 2 {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", dim + 2, record.len()),
            ));
        }
        let label = |idx: usize| -> Result<i64> {
            record[idx]
                .trim()
                .parse::<i64>()
                .map_err(|_| parse_err(line, format!("bad label {:?}", &record[idx])))
        };
        labels.push((label(0)?, label(1)?));
        for idx in 2..dim + 2 {
            let v: f64 = record[idx]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad feature value {:?}", &record[idx])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature value {v}")));
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(parse_err(2, "no samples".to_string()));
    }
    let n = labels.len();
    Ok(RawRows {
        labels,
        features: Matrix::from_vec(n, dim, data)?,
    })
}

/// Loads a labelled feature file. With `num_classes = None` the class count is
/// inferred as `max label + 1`.
pub fn load_features_csv(path: &Path, num_classes: Option<usize>) -> Result<LabeledSet> {
    let rows = read_rows(path)?;
    let inferred = rows
        .labels
        .iter()
        .map(|&(c, n)| c.max(n))
        .max()
        .unwrap_or(0)
        + 1;
    let k = num_classes.unwrap_or(inferred.max(2) as usize);
    let mut clean = Vec::with_capacity(rows.labels.len());
    let mut noisy = Vec::with_capacity(rows.labels.len());
    for (i, &(c, n)) in rows.labels.iter().enumerate() {
        for y in [c, n] {
            if y < 0 || y as usize >= k {
                return Err(NoodleError::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 2,
                    message: format!("label {y} out of range [0, {k})"),
                });
            }
        }
        clean.push(c as usize);
        noisy.push(n as usize);
    }
    LabeledSet::new(rows.features, clean, noisy, k)
}

/// Loads only the feature block of a file in the same schema; label columns
/// are parsed but ignored, so an ID file can also be read as an OOD set.
pub fn load_ood_csv(path: &Path) -> Result<Matrix> {
    Ok(read_rows(path)?.features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_written_file_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.csv");
        std::fs::write(&path, "label,noisy_label,f0,f1\n0,1,1.5,-2\n2,2,0.25,3e-3\n").unwrap();
        let set = load_features_csv(&path, Some(3)).unwrap();
        assert_eq!(set.clean_labels, vec![0, 2]);
        assert_eq!(set.noisy_labels, vec![1, 2]);
        assert_eq!(set.features.as_slice(), &[1.5, -2.0, 0.25, 3e-3]);
        assert_eq!(set.num_classes, 3);
    }

    #[test]
    fn empty_data_section_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "label,noisy_label,f0\n").unwrap();
        let err = load_features_csv(&path, None).unwrap_err();
        assert!(err.to_string().contains("no samples"), "{err}");
    }

    #[test]
    fn errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("label,noisy_label,f0,f1\n0,0,1,2\n1,1,3\n", "line 3"),
            ("label,noisy_label,f0\n0,0,1\n1,1,x\n", "line 3"),
            ("label,noisy_label,f0\n0,0,1\n0,0,1\n5,0,1\n", "line 4"),
            ("label,noisy_label,f0\n-1,0,1\n", "line 2"),
        ];
        for (i, (text, needle)) in cases.iter().enumerate() {
            let path = dir.path().join(format!("bad{i}.csv"));
            std::fs::write(&path, text).unwrap();
            let err = load_features_csv(&path, Some(3)).unwrap_err();
            assert!(err.to_string().contains(needle), "case {i}: {err}");
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hdr.csv");
        std::fs::write(&path, "y,noisy_label,f0\n0,0,1\n").unwrap();
        assert!(load_features_csv(&path, None).is_err());
    }

    #[test]
    fn random_set_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let features = Matrix::from_fn(100, 16, |_, _| rng.random_range(-1e3..1e3));
        let clean: Vec<usize> = (0..100).map(|_| rng.random_range(0..4)).collect();
        let noisy: Vec<usize> = (0..100).map(|_| rng.random_range(0..4)).collect();
        let set = LabeledSet::new(features, clean, noisy, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        save_features_csv(&set, &path).unwrap();
        let back = load_features_csv(&path, Some(4)).unwrap();
        let dev = back.features.sub(&set.features).unwrap().max_abs();
        assert!(dev <= 1e-9);
        assert_eq!(back.clean_labels, set.clean_labels);
        assert_eq!(back.noisy_labels, set.noisy_labels);
    }

    #[test]
    fn ood_file_uses_negative_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ood.csv");
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        save_ood_csv(&x, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("label,noisy_label,f0,f1\n-1,-1,"));
        assert_eq!(load_ood_csv(&path).unwrap(), x);
        assert!(load_features_csv(&path, None).is_err());
    }
}
