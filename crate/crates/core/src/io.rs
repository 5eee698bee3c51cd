//! Flat binary container and sidecar text manifests.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! tag        4 bytes   b"RRRP" (parameters) or b"RRRD" (dataset)
//! count      u32       number of header words
//! header     count × u32
//! payload    f64 values, row-major, to end of input
//! ```
//!
//! For parameters the header is the layer sizes and the payload is each
//! layer's weight (`in × out`) followed by its bias. For datasets the header
//! is `[N, D, K]` and the payload is `X` followed by the one-hot `y`.
//!
//! Manifests are `key = value` lines; `#` starts a comment line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerSpec, Params};
use crate::tensor::Tensor;

pub const PARAMS_TAG: [u8; 4] = *b"RRRP";
pub const DATASET_TAG: [u8; 4] = *b"RRRD";

/// Header words beyond this are rejected before allocating.
const MAX_HEADER_WORDS: u32 = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub tag: [u8; 4],
    pub header: Vec<u32>,
    pub payload: Vec<f64>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.header.len() + 8 * self.payload.len());
        out.extend_from_slice(&self.tag);
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        for h in &self.header {
            out.extend_from_slice(&h.to_le_bytes());
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::Container(m);
        if bytes.len() < 8 {
            return Err(err(format!("{} bytes is shorter than the 8-byte preamble", bytes.len())));
        }
        let tag: [u8; 4] = bytes[..4].try_into().unwrap();
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if count > MAX_HEADER_WORDS {
            return Err(err(format!("header word count {count} is implausible")));
        }
        let header_end = 8 + 4 * count as usize;
        if bytes.len() < header_end {
            return Err(err(format!("truncated header: need {header_end} bytes, have {}", bytes.len())));
        }
        let header = bytes[8..header_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rest = &bytes[header_end..];
        if rest.len() % 8 != 0 {
            return Err(err(format!("payload of {} bytes is not a whole number of f64", rest.len())));
        }
        let payload = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { tag, header, payload })
    }
}

pub fn encode_params(params: &Params) -> Vec<u8> {
    Container {
        tag: PARAMS_TAG,
        header: params.spec().sizes().iter().map(|&s| s as u32).collect(),
        payload: params.flatten(),
    }
    .encode()
}

pub fn decode_params(bytes: &[u8]) -> Result<Params> {
    let c = Container::decode(bytes)?;
    if c.tag != PARAMS_TAG {
        return Err(Error::Container(format!("expected parameter tag, found {:?}", c.tag)));
    }
    let sizes: Vec<usize> = c.header.iter().map(|&s| s as usize).collect();
    let spec = LayerSpec::new(sizes.clone()).map_err(|e| Error::Container(e.to_string()))?;
    let expected = sizes
        .windows(2)
        .try_fold(0usize, |acc, w| w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc));
    if expected != Some(c.payload.len()) {
        return Err(Error::Container(format!(
            "layer sizes {sizes:?} do not match {} payload values",
            c.payload.len()
        )));
    }
    let mut offset = 0;
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for w in sizes.windows(2) {
        let (i, o) = (w[0], w[1]);
        let weight = Tensor::from_parts(vec![i, o], c.payload[offset..offset + i * o].to_vec());
        offset += i * o;
        let bias = Tensor::from_parts(vec![o], c.payload[offset..offset + o].to_vec());
        offset += o;
        layers.push(Layer { weight, bias });
    }
    Params::from_layers(spec, layers)
}

/// Ordered `key = value` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Container(format!(
                "manifest line {}: expected `key = value`",
                lineno + 1
            )))?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Container(format!("manifest line {}: bad key {k:?}", lineno + 1)));
            }
            m.set(k, v.trim());
        }
        Ok(m)
    }
}

/// Writes `<path>` (binary) and `<path>.manifest` (text).
pub fn save_params(params: &Params, path: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::write(path, encode_params(params))?;
    let mut m = manifest.clone();
    let layers: Vec<String> = params.spec().sizes().iter().map(|s| s.to_string()).collect();
    m.set("layers", layers.join(","));
    m.set("params_digest", params.digest());
    std::fs::write(manifest_path(path), m.to_text())?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Params> {
    decode_params(&std::fs::read(path)?)
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    p.into()
}
