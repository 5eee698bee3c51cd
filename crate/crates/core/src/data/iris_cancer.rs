//! Composite of two tabular datasets whose features are jointly predictive.
//!
//! CSV layouts (one header line, skipped):
//! - iris: 4 numeric features, then an integer class in `{0, 1, 2}`;
//! - cancer: 30 numeric features, then an integer class in `{0, 1}`.
//!
//! Iris classes 1 and 2 (50 rows each) are paired row by row with the first
//! 50 cancer rows of class 0 and class 1 respectively, giving 100 rows of
//! 34 features. Iris occupies columns 0–3.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{one_hot, Dataset, DatasetKind};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const IRIS_FEATURES: usize = 4;
pub const CANCER_FEATURES: usize = 30;
pub const PER_CLASS: usize = 50;
pub const IRIS_COLUMNS: [usize; 4] = [0, 1, 2, 3];
/// Value written over the iris columns by [`remove_iris`].
pub const NEUTRAL: f64 = 0.5;

/// `(features, class)` rows of a numeric CSV with `width` feature columns.
pub fn parse_labeled_csv(text: &str, width: usize) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let record = record.map_err(|e| Error::Csv {
            row: line,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != width + 1 {
            return Err(Error::Csv {
                row: line,
                column: record.len().min(width + 1),
                message: format!("expected {} fields, found {}", width + 1, record.len()),
            });
        }
        let mut feats = Vec::with_capacity(width);
        for (j, field) in record.iter().take(width).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Csv {
                row: line,
                column: j + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    row: line,
                    column: j + 1,
                    message: format!("non-finite value {field:?}"),
                });
            }
            feats.push(v);
        }
        let class: usize = record[width].parse().map_err(|_| Error::Csv {
            row: line,
            column: width + 1,
            message: format!("not a class index: {:?}", &record[width]),
        })?;
        rows.push((feats, class));
    }
    Ok(rows)
}

fn first_of_class(rows: &[(Vec<f64>, usize)], class: usize, source: &str) -> Result<Vec<Vec<f64>>> {
    let picked: Vec<Vec<f64>> = rows
        .iter()
        .filter(|(_, c)| *c == class)
        .take(PER_CLASS)
        .map(|(f, _)| f.clone())
        .collect();
    if picked.len() < PER_CLASS {
        return Err(invalid(format!(
            "{source} has only {} rows of class {class}, need {PER_CLASS}",
            picked.len()
        )));
    }
    Ok(picked)
}

/// Builds the 100 × 34 composite from CSV text. Features are min-max scaled
/// to `[0, 1]` over the 100 rows; row order is shuffled by `seed`.
pub fn load_iris_cancer(iris_csv: &str, cancer_csv: &str, seed: u64) -> Result<Dataset> {
    let iris = parse_labeled_csv(iris_csv, IRIS_FEATURES)?;
    let cancer = parse_labeled_csv(cancer_csv, CANCER_FEATURES)?;
    let pairs = [
        (first_of_class(&iris, 1, "iris")?, first_of_class(&cancer, 0, "cancer")?),
        (first_of_class(&iris, 2, "iris")?, first_of_class(&cancer, 1, "cancer")?),
    ];
    let d = IRIS_FEATURES + CANCER_FEATURES;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(2 * PER_CLASS);
    for (label, (iris_rows, cancer_rows)) in pairs.into_iter().enumerate() {
        for (a, b) in iris_rows.into_iter().zip(cancer_rows) {
            let mut r = a;
            r.extend(b);
            rows.push((r, label));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);

    let n = rows.len();
    let mut x: Vec<f64> = rows.iter().flat_map(|(r, _)| r.iter().copied()).collect();
    for j in 0..d {
        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let v = x[i * d + j];
            (lo.min(v), hi.max(v))
        });
        for i in 0..n {
            let v = &mut x[i * d + j];
            *v = if hi > lo { (*v - lo) / (hi - lo) } else { NEUTRAL };
        }
    }
    let labels: Vec<usize> = rows.iter().map(|(_, l)| *l).collect();
    Dataset::new(DatasetKind::IrisCancer, Tensor::from_parts(vec![n, d], x), one_hot(&labels, 2)?, None)
}

pub fn load_iris_cancer_files(iris: &Path, cancer: &Path, seed: u64) -> Result<Dataset> {
    load_iris_cancer(&std::fs::read_to_string(iris)?, &std::fs::read_to_string(cancer)?, seed)
}

/// Overwrites the iris columns with the neutral scaled value.
pub fn remove_iris(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for i in 0..out.len() {
        let row = out.x.row_mut(i);
        for &j in &IRIS_COLUMNS {
            row[j] = NEUTRAL;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_labeled_csv("h\n1,2,x,4,0\n", 4).unwrap_err();
        assert!(matches!(err, Error::Csv { row: 2, column: 3, .. }), "{err}");
        let err = parse_labeled_csv("h\n1,2,3,4,0\n1,2,3,0\n", 4).unwrap_err();
        assert!(matches!(err, Error::Csv { row: 3, .. }), "{err}");
        let err = parse_labeled_csv("h\n1,2,3,4,-1\n", 4).unwrap_err();
        assert!(matches!(err, Error::Csv { row: 2, column: 5, .. }), "{err}");
    }

    #[test]
    fn insufficient_rows() {
        let iris = "h\n1,2,3,4,1\n";
        let cancer = format!("h\n{}0\n", "1,".repeat(30));
        assert!(load_iris_cancer(iris, &cancer, 0).is_err());
    }
}
