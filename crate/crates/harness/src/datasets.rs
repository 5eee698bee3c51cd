//! Materializes the train/test splits an experiment config describes.

use std::path::{Path, PathBuf};

use rrr_core::data::idx::load_digits;
use rrr_core::data::iris_cancer::load_iris_cancer_files;
use rrr_core::data::{gen_quadrant2d, gen_toy_color, inject_decoy, train_test_split, Dataset, DecoyMode};

use crate::config::{DataKind, DatasetConfig};
use crate::error::{config_err, Result};

/// Environment variable that points at a data directory.
pub const DATA_DIR_ENV: &str = "RRR_DATA_DIR";

/// The data directory shipped with the repository.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

const IMAGE_NAMES: [&str; 4] = [
    "images-idx3-ubyte",
    "images-idx3-ubyte.gz",
    "train-images-idx3-ubyte",
    "train-images-idx3-ubyte.gz",
];
const LABEL_NAMES: [&str; 4] = [
    "labels-idx1-ubyte",
    "labels-idx1-ubyte.gz",
    "train-labels-idx1-ubyte",
    "train-labels-idx1-ubyte.gz",
];

fn find(root: &Path, dirs: &[&str], names: &[&str]) -> Option<PathBuf> {
    dirs.iter()
        .flat_map(|d| names.iter().map(move |n| root.join(d).join(n)))
        .find(|p| p.is_file())
}

/// Digit IDX files under `root/mnist-subset`, `root/mnist` or `root` itself.
pub fn digit_files(root: &Path) -> Result<(PathBuf, PathBuf)> {
    let dirs = ["mnist-subset", "mnist", "."];
    let images = find(root, &dirs, &IMAGE_NAMES);
    let labels = find(root, &dirs, &LABEL_NAMES);
    match (images, labels) {
        (Some(i), Some(l)) => Ok((i, l)),
        _ => Err(config_err(
            "dataset.kind",
            format!("no digit IDX files found under {}", root.display()),
        )),
    }
}

pub fn build_splits(cfg: &DatasetConfig, root: &Path) -> Result<Splits> {
    let seed = cfg.seed.ok_or_else(|| config_err("dataset.seed", "is required"))?;
    let test_seed = cfg.test_seed.unwrap_or(seed.wrapping_add(1));
    let (n_train, n_test) = cfg.sizes();
    let splits = match cfg.kind {
        DataKind::ToyColor => Splits {
            train: gen_toy_color(n_train, seed)?,
            test: gen_toy_color(n_test, test_seed)?,
        },
        DataKind::Quadrant2d => Splits {
            train: gen_quadrant2d(n_train, seed)?,
            test: gen_quadrant2d(n_test, test_seed)?,
        },
        DataKind::Digits => {
            let (images, labels) = digit_files(root)?;
            let all = load_digits(&images, &labels)?;
            if n_train + n_test > all.len() {
                return Err(config_err(
                    "dataset.train_size",
                    format!("{n_train} + {n_test} rows requested but {} are available", all.len()),
                ));
            }
            let train = all.take(n_train);
            let test = all.subset(&(n_train..n_train + n_test).collect::<Vec<_>>());
            if cfg.decoy {
                Splits {
                    train: inject_decoy(&train, DecoyMode::Train, seed)?,
                    test: inject_decoy(&test, DecoyMode::Test, test_seed)?,
                }
            } else {
                Splits { train, test }
            }
        }
        DataKind::IrisCancer => {
            let dir = root.join("uci");
            let all = load_iris_cancer_files(&dir.join("iris.csv"), &dir.join("breast_cancer.csv"), seed)?;
            let (train, test) = train_test_split(&all, 1.0 - cfg.test_fraction.unwrap_or(0.25), seed)?;
            Splits { train, test }
        }
    };
    Ok(splits)
}
