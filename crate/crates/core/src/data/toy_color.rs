//! 5×5 RGB images over a four-colour palette with two redundant rules:
//! the four corners share one colour, and the three top-middle pixels are
//! pairwise distinct. Label 0 images satisfy both rules, label 1 neither.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{balanced_labels, one_hot, Dataset, DatasetKind, Geometry};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const SIDE: usize = 5;
pub const CHANNELS: usize = 3;
pub const PALETTE: [[f64; 3]; 4] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];

/// `(row, col)` of the four corner pixels.
pub const CORNERS: [(usize, usize); 4] = [(0, 0), (0, SIDE - 1), (SIDE - 1, 0), (SIDE - 1, SIDE - 1)];
/// `(row, col)` of the three top-middle pixels.
pub const TOP_MIDDLE: [(usize, usize); 3] = [(0, 1), (0, 2), (0, 3)];

pub fn geometry() -> Geometry {
    Geometry::new(SIDE, SIDE, CHANNELS)
}

pub fn corners_match(colors: [usize; 4]) -> bool {
    colors.iter().all(|&c| c == colors[0])
}

pub fn top_middle_distinct(colors: [usize; 3]) -> bool {
    colors[0] != colors[1] && colors[1] != colors[2] && colors[0] != colors[2]
}

/// Label of an image given its palette indices, or `None` if it satisfies
/// exactly one rule (such images are never generated).
pub fn classify(pixels: &[usize; SIDE * SIDE]) -> Option<usize> {
    let corners = CORNERS.map(|(r, c)| pixels[r * SIDE + c]);
    let top = TOP_MIDDLE.map(|(r, c)| pixels[r * SIDE + c]);
    match (corners_match(corners), top_middle_distinct(top)) {
        (true, true) => Some(0),
        (false, false) => Some(1),
        _ => None,
    }
}

/// Generates `n` images (`n` even), exactly half per class.
pub fn gen_toy_color(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(invalid(format!("toy color needs a positive even count, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = balanced_labels(n, 2, &mut rng);
    let d = SIDE * SIDE * CHANNELS;
    let mut x = Vec::with_capacity(n * d);
    for &label in &labels {
        let pixels = sample_image(label, &mut rng);
        for p in pixels {
            x.extend_from_slice(&PALETTE[p]);
        }
    }
    Dataset::new(
        DatasetKind::ToyColor,
        Tensor::from_parts(vec![n, d], x),
        one_hot(&labels, 2)?,
        Some(geometry()),
    )
}

fn sample_image(label: usize, rng: &mut ChaCha8Rng) -> [usize; SIDE * SIDE] {
    let k = PALETTE.len();
    let mut px = [0usize; SIDE * SIDE];
    for p in px.iter_mut() {
        *p = rng.random_range(0..k);
    }
    let (corners, top) = if label == 0 {
        let c = rng.random_range(0..k);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(rng);
        ([c; 4], [order[0], order[1], order[2]])
    } else {
        let corners = loop {
            let cs = [0; 4].map(|_| rng.random_range(0..k));
            if !corners_match(cs) {
                break cs;
            }
        };
        let top = loop {
            let ts = [0; 3].map(|_| rng.random_range(0..k));
            if !top_middle_distinct(ts) {
                break ts;
            }
        };
        (corners, top)
    };
    for (&(r, c), &v) in CORNERS.iter().zip(&corners) {
        px[r * SIDE + c] = v;
    }
    for (&(r, c), &v) in TOP_MIDDLE.iter().zip(&top) {
        px[r * SIDE + c] = v;
    }
    px
}

/// Recovers palette indices from one row of `X`; `None` if a pixel is off-palette.
pub fn decode_pixels(row: &[f64]) -> Option<[usize; SIDE * SIDE]> {
    let mut out = [0usize; SIDE * SIDE];
    for (i, px) in row.chunks(CHANNELS).enumerate() {
        out[i] = PALETTE.iter().position(|c| c[..] == *px)?;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(corners: [usize; 4], top: [usize; 3]) -> [usize; 25] {
        let mut px = [0usize; 25];
        for (&(r, c), &v) in CORNERS.iter().zip(&corners) {
            px[r * SIDE + c] = v;
        }
        for (&(r, c), &v) in TOP_MIDDLE.iter().zip(&top) {
            px[r * SIDE + c] = v;
        }
        px
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify(&image([2, 2, 2, 2], [0, 1, 3])), Some(0));
        assert_eq!(classify(&image([2, 2, 2, 3], [1, 1, 0])), Some(1));
        assert_eq!(classify(&image([2, 2, 2, 2], [1, 1, 0])), None);
    }

    #[test]
    fn odd_count_rejected() {
        assert!(gen_toy_color(7, 0).is_err());
        assert!(gen_toy_color(0, 0).is_err());
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_toy_color(20, 3).unwrap(), gen_toy_color(20, 3).unwrap());
    }
}
