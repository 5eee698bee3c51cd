use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{balanced_labels, one_hot, Dataset, DatasetKind};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Distance of each class from the axes.
pub const MARGIN: f64 = 0.1;

/// Two-feature data: class 0 uniform on `[0.1, 1]²`, class 1 uniform on
/// `[−1, −0.1]²`. Both axis-aligned boundaries separate it perfectly.
pub fn gen_quadrant2d(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(invalid(format!("quadrant data needs a positive even count, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = balanced_labels(n, 2, &mut rng);
    let mut x = Vec::with_capacity(2 * n);
    for &l in &labels {
        let sign = if l == 0 { 1.0 } else { -1.0 };
        for _ in 0..2 {
            x.push(sign * rng.random_range(MARGIN..=1.0));
        }
    }
    Dataset::new(DatasetKind::Quadrant2d, Tensor::from_parts(vec![n, 2], x), one_hot(&labels, 2)?, None)
}
