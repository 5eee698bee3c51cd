//! Datasets: synthetic generators, the decoy injector and file loaders.

pub mod decoy;
pub mod idx;
pub mod iris_cancer;
pub mod quadrant;
pub mod toy_color;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::io::{Container, Manifest, DATASET_TAG};
use crate::tensor::Tensor;

pub use decoy::{inject_decoy, Corner, DecoyMode};
pub use idx::{encode_idx, parse_idx, IdxArray, IdxError};
pub use iris_cancer::{load_iris_cancer, remove_iris};
pub use quadrant::gen_quadrant2d;
pub use toy_color::gen_toy_color;

/// Image layout of a row of `X`: pixel-major, channels innermost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Geometry {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    ToyColor,
    Digits,
    IrisCancer,
    Quadrant2d,
    Other,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::ToyColor => "toy_color",
            DatasetKind::Digits => "digits",
            DatasetKind::IrisCancer => "iris_cancer",
            DatasetKind::Quadrant2d => "quadrant2d",
            DatasetKind::Other => "other",
        }
    }

    fn from_name(s: &str) -> Self {
        match s {
            "toy_color" => DatasetKind::ToyColor,
            "digits" => DatasetKind::Digits,
            "iris_cancer" => DatasetKind::IrisCancer,
            "quadrant2d" => DatasetKind::Quadrant2d,
            _ => DatasetKind::Other,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    /// `N × D`
    pub x: Tensor,
    /// One-hot `N × K`.
    pub y: Tensor,
    pub geometry: Option<Geometry>,
    /// Corner of the injected swatch per row, for decoy datasets.
    pub swatch_corners: Option<Vec<Corner>>,
}

impl Dataset {
    pub fn new(kind: DatasetKind, x: Tensor, y: Tensor, geometry: Option<Geometry>) -> Result<Self> {
        if x.shape().len() != 2 || y.shape().len() != 2 || x.rows() != y.rows() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        if let Some(g) = geometry {
            if g.len() != x.cols() {
                return Err(invalid(format!("geometry {g:?} does not cover {} features", x.cols())));
            }
        }
        for i in 0..y.rows() {
            let row = y.row(i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(invalid(format!("label row {i} is not one-hot")));
            }
        }
        Ok(Self {
            kind,
            x,
            y,
            geometry,
            swatch_corners: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.y.cols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.y.argmax_rows()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            kind: self.kind,
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            geometry: self.geometry,
            swatch_corners: self
                .swatch_corners
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// First `n` rows.
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn values_in_unit_interval(&self) -> bool {
        self.x.data().iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn to_container(&self) -> Container {
        let mut payload = self.x.data().to_vec();
        payload.extend_from_slice(self.y.data());
        Container {
            tag: DATASET_TAG,
            header: vec![self.len() as u32, self.num_features() as u32, self.num_classes() as u32],
            payload,
        }
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("kind", self.kind.name())
            .set("n", self.len())
            .set("d", self.num_features())
            .set("k", self.num_classes());
        if let Some(g) = self.geometry {
            m.set("geometry", format!("{}x{}x{}", g.height, g.width, g.channels));
        }
        if let Some(c) = &self.swatch_corners {
            let s: Vec<String> = c.iter().map(|c| (*c as u8).to_string()).collect();
            m.set("swatch_corners", s.join(","));
        }
        m
    }

    /// Rebuilds a dataset from its container and optional manifest.
    pub fn from_container(c: &Container, manifest: Option<&Manifest>) -> Result<Self> {
        let bad = |m: String| Error::Container(m);
        if c.tag != DATASET_TAG {
            return Err(bad(format!("expected dataset tag, found {:?}", c.tag)));
        }
        let [n, d, k] = c.header[..] else {
            return Err(bad(format!("dataset header needs 3 words, got {}", c.header.len())));
        };
        let (n, d, k) = (n as usize, d as usize, k as usize);
        let nx = n.checked_mul(d);
        let ny = n.checked_mul(k);
        let total = nx.zip(ny).and_then(|(a, b)| a.checked_add(b));
        if n == 0 || d == 0 || k == 0 || total != Some(c.payload.len()) {
            return Err(bad(format!("header {n}x{d}x{k} does not match {} values", c.payload.len())));
        }
        let nx = nx.unwrap();
        let x = Tensor::from_parts(vec![n, d], c.payload[..nx].to_vec());
        let y = Tensor::from_parts(vec![n, k], c.payload[nx..].to_vec());
        let mut kind = DatasetKind::Other;
        let mut geometry = None;
        let mut corners = None;
        if let Some(m) = manifest {
            if let Some(s) = m.get("kind") {
                kind = DatasetKind::from_name(s);
            }
            if let Some(s) = m.get("geometry") {
                let dims: Vec<usize> = s
                    .split('x')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("geometry {s:?}: {e}")))?;
                let [h, w, ch] = dims[..] else {
                    return Err(bad(format!("geometry {s:?} needs three extents")));
                };
                geometry = Some(Geometry::new(h, w, ch));
            }
            if let Some(s) = m.get("swatch_corners") {
                let cs: Vec<Corner> = s
                    .split(',')
                    .map(|p| p.trim().parse::<u8>().ok().and_then(Corner::from_index))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("bad swatch_corners".into()))?;
                if cs.len() != n {
                    return Err(bad("swatch_corners length differs from n".into()));
                }
                corners = Some(cs);
            }
        }
        let mut ds = Self::new(kind, x, y, geometry).map_err(|e| bad(e.to_string()))?;
        ds.swatch_corners = corners;
        Ok(ds)
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(invalid(format!("label {l} out of range for {num_classes} classes")));
        }
        data[i * num_classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), num_classes], data)
}

/// Stratified row partition: each class contributes `round(fraction · n_c)`
/// rows to the first part. Both index lists come back sorted.
pub fn split_indices(labels: &[usize], num_classes: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(invalid(format!(
            "split of {} rows at fraction {fraction} leaves an empty side",
            labels.len()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn train_test_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (a, b) = split_indices(&ds.labels(), ds.num_classes(), fraction, seed)?;
    Ok((ds.subset(&a), ds.subset(&b)))
}

/// Class labels `[0,0,...,1,1,...]` with `n / k` of each, shuffled.
pub(crate) fn balanced_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    labels.shuffle(rng);
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Tensor::new(vec![n, 2], (0..2 * n).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        Dataset::new(DatasetKind::Other, x, one_hot(&labels, 2).unwrap(), None).unwrap()
    }

    #[test]
    fn split_sizes_partition_and_determinism() {
        let ds = toy(100);
        let (a, b) = split_indices(&ds.labels(), 2, 2.0 / 3.0, 4).unwrap();
        assert!(a.len() == 66 || a.len() == 67, "{}", a.len());
        assert_eq!(a.len() + b.len(), 100);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(&ds.labels(), 2, 2.0 / 3.0, 4).unwrap(), (a.clone(), b.clone()));
        let labels = ds.labels();
        let per_class = |idx: &[usize], c| idx.iter().filter(|&&i| labels[i] == c).count() as i64;
        assert!((per_class(&a, 0) - per_class(&a, 1)).abs() <= 1);
    }

    #[test]
    fn split_rejects_degenerate() {
        let ds = toy(4);
        assert!(split_indices(&ds.labels(), 2, 0.0, 0).is_err());
        assert!(split_indices(&ds.labels(), 2, 1.0, 0).is_err());
        assert!(split_indices(&ds.labels(), 2, 0.01, 0).is_err());
    }

    #[test]
    fn dataset_rejects_non_one_hot() {
        let x = Tensor::zeros(&[2, 3]);
        let y = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(Dataset::new(DatasetKind::Other, x, y, None).is_err());
    }

    #[test]
    fn container_roundtrip_with_manifest() {
        let mut ds = toy(6);
        ds.geometry = Some(Geometry::new(1, 2, 1));
        let c = ds.to_container();
        let m = Manifest::parse(&ds.manifest().to_text()).unwrap();
        let back = Dataset::from_container(&Container::decode(&c.encode()).unwrap(), Some(&m)).unwrap();
        assert_eq!(back, ds);
    }
}
