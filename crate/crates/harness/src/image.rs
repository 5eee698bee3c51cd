//! Plain-text PGM (P2) and PPM (P3) dumps.

use std::fmt::Write as _;
use std::path::Path;

use rrr_core::data::Geometry;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Ppm,
}

impl ImageFormat {
    /// PGM for one channel, PPM for three.
    pub fn for_geometry(g: Geometry) -> Result<Self> {
        match g.channels {
            1 => Ok(ImageFormat::Pgm),
            3 => Ok(ImageFormat::Ppm),
            c => Err(config_err("dump", format!("{c}-channel images have no PGM/PPM form"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Ppm => "ppm",
        }
    }

    fn channels(self) -> usize {
        match self {
            ImageFormat::Pgm => 1,
            ImageFormat::Ppm => 3,
        }
    }
}

/// `v ↦ (v / max|v| + 1) / 2`. An all-zero input maps to mid-grey.
pub fn signed_to_unit(values: &[f64]) -> Vec<f64> {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v / max + 1.0) / 2.0).collect()
}

/// `round(v · 255)` with halves rounded up.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor() as u8
}

/// The file text: header, then one line per image row.
pub fn render_image(values: &[f64], g: Geometry, format: ImageFormat) -> Result<String> {
    if g.channels != format.channels() {
        return Err(config_err(
            "dump",
            format!("{} needs {} channel(s), geometry has {}", format.extension(), format.channels(), g.channels),
        ));
    }
    if values.len() != g.len() {
        return Err(config_err(
            "dump",
            format!("{} values do not fit a {}x{}x{} image", values.len(), g.height, g.width, g.channels),
        ));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(config_err("dump", format!("value {v} at index {i} is outside [0, 1]")));
    }
    let magic = match format {
        ImageFormat::Pgm => "P2",
        ImageFormat::Ppm => "P3",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", g.width, g.height);
    for r in 0..g.height {
        let mut line = String::new();
        for c in 0..g.width {
            for ch in 0..g.channels {
                if !line.is_empty() {
                    line.push(' ');
                }
                let _ = write!(line, "{}", quantize(values[g.index(r, c, ch)]));
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn dump_image(values: &[f64], g: Geometry, path: &Path, format: ImageFormat) -> Result<()> {
    let text = render_image(values, g, format)?;
    std::fs::write(path, text).map_err(io_err(path))
}
