//! Label-correlated gray swatches in image corners.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Geometry};
use crate::error::{invalid, Result};

pub const SWATCH: usize = 4;
pub const DECOY_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Corner {
    TopLeft = 0,
    TopRight = 1,
    BottomLeft = 2,
    BottomRight = 3,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight];

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    /// Feature indices of the swatch block at this corner.
    pub fn swatch_pixels(self, g: Geometry) -> Vec<usize> {
        let r0 = match self {
            Corner::TopLeft | Corner::TopRight => 0,
            _ => g.height - SWATCH,
        };
        let c0 = match self {
            Corner::TopLeft | Corner::BottomLeft => 0,
            _ => g.width - SWATCH,
        };
        let mut out = Vec::with_capacity(SWATCH * SWATCH * g.channels);
        for r in r0..r0 + SWATCH {
            for c in c0..c0 + SWATCH {
                for ch in 0..g.channels {
                    out.push(g.index(r, c, ch));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoyMode {
    /// Shade is a function of the label.
    Train,
    /// Shade drawn uniformly from the ten training shades.
    Test,
}

/// Training-mode shade for a digit label: `(255 − 25·y) / 255`.
pub fn train_shade(label: usize) -> f64 {
    (255.0 - 25.0 * label as f64) / 255.0
}

pub fn inject_decoy(base: &Dataset, mode: DecoyMode, seed: u64) -> Result<Dataset> {
    let g = base
        .geometry
        .ok_or_else(|| invalid("decoy injection needs image geometry"))?;
    if g.height < 2 * SWATCH || g.width < 2 * SWATCH || g.channels != 1 {
        return Err(invalid(format!("decoy injection needs a single-channel image of at least 8×8, got {g:?}")));
    }
    if base.num_classes() != DECOY_CLASSES {
        return Err(invalid(format!("decoy injection needs 10 classes, got {}", base.num_classes())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = base.clone();
    let labels = base.labels();
    let mut corners = Vec::with_capacity(base.len());
    for (i, &label) in labels.iter().enumerate() {
        let corner = Corner::ALL[rng.random_range(0..4)];
        let shade = match mode {
            DecoyMode::Train => train_shade(label),
            DecoyMode::Test => train_shade(rng.random_range(0..DECOY_CLASSES)),
        };
        let row = out.x.row_mut(i);
        for p in corner.swatch_pixels(g) {
            row[p] = shade;
        }
        corners.push(corner);
    }
    out.swatch_corners = Some(corners);
    Ok(out)
}
