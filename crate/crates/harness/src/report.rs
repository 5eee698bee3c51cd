//! Machine-readable experiment reports.
//!
//! The report is pretty-printed JSON whose keys follow struct declaration
//! order, so two runs of the same config produce byte-identical files.
//! Every accuracy comes with the predicted labels it was computed from.

use std::io::Write as _;
use std::path::Path;

use rrr_core::explain::FaeStop;
use rrr_core::train::{LambdaBalance, StepRecord};
use rrr_core::{AttackSpec, Defense, PenaltyConfig};
use serde::Serialize;

use crate::config::{DataKind, FaeMode, Variant};
use crate::error::{io_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub name: String,
    /// `complete`, or `failed: <reason>` for a partial report.
    pub status: String,
    pub dataset: DatasetSummary,
    pub models: Vec<ModelReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<AttackReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fae: Option<FaeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<Vec<EfficiencyPoint>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub kind: DataKind,
    pub seed: u64,
    pub decoy: bool,
    pub train_size: usize,
    pub test_size: usize,
    pub features: usize,
    pub classes: usize,
    pub test_labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RuleMasses {
    pub corner: f64,
    pub top_middle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelReport {
    pub name: String,
    pub defense: Defense,
    pub penalty: PenaltyConfig,
    pub seed: u64,
    pub init_seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance: Option<LambdaBalance>,
    pub params_digest: String,
    pub first_step: Option<StepRecord>,
    pub last_step: Option<StepRecord>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_test_accuracy: Option<f64>,
    /// Toy Color only, on the test set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule_masses: Option<RuleMasses>,
    pub predictions: Vec<usize>,
}

/// One attack spec over the whole roster.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub spec: AttackSpec,
    /// One row per source model; row `i`, cell `j` evaluates roster model `j`
    /// on the examples crafted against model `i`.
    pub rows: Vec<AttackRow>,
    pub overlap: Vec<Overlap>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackRow {
    pub source: String,
    pub cells: Vec<AttackCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackCell {
    pub target: String,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

impl AttackReport {
    /// `accuracy[source][target]`.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.cells.iter().map(|c| c.accuracy).collect()).collect()
    }
}

/// Which of one source's adversarial examples fool which models.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Overlap {
    pub source: String,
    /// Misclassified indices per roster model, in roster order.
    pub fooled: Vec<FooledSet>,
    pub fooled_by_all: Vec<usize>,
    /// `|fooled(a) ∩ fooled(b)|` for every pair `a < b`.
    pub pairwise: Vec<PairCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FooledSet {
    pub model: String,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairCount {
    pub a: String,
    pub b: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaeReport {
    pub mode: FaeMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<FaeStop>,
    pub iterations: Vec<FaeModelReport>,
    /// Simultaneous mode: mean per-example |cos| between input gradients
    /// of each model pair, on the test set.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pair_cosines: Vec<PairCosine>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaeModelReport {
    pub index: usize,
    pub lambda1: f64,
    /// Fraction of annotated entries the model was trained under.
    pub coverage: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule_masses: Option<RuleMasses>,
    pub params_digest: String,
    pub predictions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairCosine {
    pub a: usize,
    pub b: usize,
    pub mean_abs_cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda1: f64,
    /// Initial summed cross-entropy over the training set.
    pub cross_entropy: f64,
    /// Initial unweighted penalty over the training set.
    pub penalty: f64,
    /// `λ₁ · penalty / cross_entropy`.
    pub ratio: f64,
    pub test_accuracy: Option<f64>,
    /// Set when training diverged or failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EfficiencyPoint {
    pub variant: Variant,
    pub n: usize,
    pub seed: u64,
    /// Balanced λ₁; absent for the unannotated variant.
    pub lambda1: Option<f64>,
    pub test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<usize>>,
}

pub fn to_json(report: &Report) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json(report: &Report, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(report)?).map_err(io_err(path))
}

/// One JSON object per line (training logs).
pub fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(io_err(path))
}

pub fn write_attack_csv(attacks: &[AttackReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["attack", "kind", "epsilon", "source", "target", "accuracy"])?;
    for (i, a) in attacks.iter().enumerate() {
        let kind = serde_json::to_value(a.spec.kind)?;
        let kind = kind.as_str().unwrap_or_default().to_string();
        for row in &a.rows {
            for cell in &row.cells {
                w.write_record([
                    i.to_string(),
                    kind.clone(),
                    a.spec.epsilon.to_string(),
                    row.source.clone(),
                    cell.target.clone(),
                    cell.accuracy.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda1", "cross_entropy", "penalty", "ratio", "test_accuracy", "failure"])?;
    for p in points {
        w.write_record([
            p.lambda1.to_string(),
            p.cross_entropy.to_string(),
            p.penalty.to_string(),
            p.ratio.to_string(),
            opt(p.test_accuracy),
            p.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_efficiency_csv(points: &[EfficiencyPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "n", "seed", "lambda1", "test_accuracy", "failure"])?;
    for p in points {
        w.write_record([
            p.variant.name().to_string(),
            p.n.to_string(),
            p.seed.to_string(),
            opt(p.lambda1),
            opt(p.test_accuracy),
            p.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
