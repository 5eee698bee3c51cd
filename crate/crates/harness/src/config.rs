//! Experiment configuration files.
//!
//! Configs are TOML. Every table rejects unknown keys, and validation errors
//! name the offending field by its dotted path (`dataset.seed`,
//! `models[1].name`, ...). See `configs/` for complete examples.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rrr_core::data::Dataset;
use rrr_core::explain::{AnnotationRule, FaeConfig, MaskCutoff};
use rrr_core::objectives::GradientKind;
use rrr_core::{AdamConfig, Annotation, AttackSpec, Defense, LayerSpec, PenaltyConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainSection,
    /// Roster of models. Empty means a single model named `model` trained
    /// with `[train]` as is.
    #[serde(default)]
    pub models: Vec<ModelSection>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    pub fae: Option<FaeSection>,
    pub sweep: Option<SweepSection>,
    pub efficiency: Option<EfficiencySection>,
    pub dump: Option<DumpSection>,
    /// Output directory; `--out` takes precedence.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    ToyColor,
    Digits,
    IrisCancer,
    #[serde(rename = "quadrant2d")]
    Quadrant2d,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::ToyColor => "toy_color",
            DataKind::Digits => "digits",
            DataKind::IrisCancer => "iris_cancer",
            DataKind::Quadrant2d => "quadrant2d",
        }
    }

    pub fn has_images(self) -> bool {
        matches!(self, DataKind::ToyColor | DataKind::Digits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DataKind,
    /// Required. Drives generation, shuffling and decoy placement.
    pub seed: Option<u64>,
    /// Seed of the generated test set; defaults to `seed + 1`.
    pub test_seed: Option<u64>,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    /// Inject the grey-swatch confound (digits only).
    #[serde(default)]
    pub decoy: bool,
    /// Held-out fraction for the iris-cancer composite.
    pub test_fraction: Option<f64>,
}

impl DatasetConfig {
    pub fn sizes(&self) -> (usize, usize) {
        let (train, test) = match self.kind {
            DataKind::ToyColor => (10_000, 1_000),
            DataKind::Digits => (5_000, 1_000),
            DataKind::Quadrant2d => (1_000, 1_000),
            DataKind::IrisCancer => (0, 0),
        };
        (self.train_size.unwrap_or(train), self.test_size.unwrap_or(test))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSection {
    pub rule: AnnotationRule,
    /// Fraction of training rows that receive the annotation.
    #[serde(default = "one")]
    pub fraction: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub hidden: Vec<usize>,
    pub steps: usize,
    /// Clamped to the training-set size.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    /// Required (here or via `--seed`).
    pub seed: Option<u64>,
    pub init_seed: Option<u64>,
    pub defense: Defense,
    pub penalty: PenaltyConfig,
    pub annotation: Option<AnnotationSection>,
    /// When set, λ₁ is replaced by the grid value that balances the
    /// initial loss terms.
    pub balance_grid: Option<Vec<f64>>,
    pub adv_epsilon: f64,
    pub temperature: f64,
    pub log_every: usize,
    pub divergence_limit: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            hidden: vec![50, 30],
            steps: 1000,
            batch_size: 256,
            learning_rate: adam.learning_rate,
            adam_epsilon: adam.epsilon,
            seed: None,
            init_seed: None,
            defense: Defense::None,
            penalty: PenaltyConfig::default(),
            annotation: None,
            balance_grid: None,
            adv_epsilon: 0.3,
            temperature: 50.0,
            log_every: 0,
            divergence_limit: rrr_core::train::DIVERGENCE_LIMIT,
        }
    }
}

impl TrainSection {
    /// The core training config for `ds`. Needs a seed.
    pub fn to_train_config(&self, ds: &Dataset) -> Result<TrainConfig> {
        let seed = self.seed.ok_or_else(|| config_err("train.seed", "is required"))?;
        let mut sizes = vec![ds.num_features()];
        sizes.extend(&self.hidden);
        sizes.push(ds.num_classes());
        let mut cfg = TrainConfig::new(LayerSpec::new(sizes)?);
        cfg.penalty = self.penalty;
        cfg.batch_size = self.batch_size.min(ds.len());
        cfg.steps = self.steps;
        cfg.adam.learning_rate = self.learning_rate;
        cfg.adam.epsilon = self.adam_epsilon;
        cfg.seed = seed;
        cfg.init_seed = self.init_seed;
        cfg.defense = self.defense;
        cfg.adv_epsilon = self.adv_epsilon;
        cfg.temperature = self.temperature;
        cfg.log_every = self.log_every;
        cfg.divergence_limit = self.divergence_limit;
        cfg.annotation = match &self.annotation {
            Some(a) => Annotation::Rule {
                rule: a.rule,
                fraction: a.fraction,
            },
            None => Annotation::None,
        };
        Ok(cfg)
    }
}

/// A roster entry: a name plus overrides of `[train]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub defense: Option<Defense>,
    pub penalty: Option<PenaltyConfig>,
    pub annotation: Option<AnnotationSection>,
    pub balance_grid: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub init_seed: Option<u64>,
    pub adv_epsilon: Option<f64>,
    pub temperature: Option<f64>,
    pub divergence_limit: Option<f64>,
}

impl ModelSection {
    pub fn apply(&self, base: &TrainSection) -> TrainSection {
        let mut t = base.clone();
        if let Some(v) = self.defense {
            t.defense = v;
        }
        if let Some(v) = self.penalty {
            t.penalty = v;
        }
        if let Some(v) = &self.annotation {
            t.annotation = Some(v.clone());
        }
        if let Some(v) = &self.balance_grid {
            t.balance_grid = Some(v.clone());
        }
        if let Some(v) = self.steps {
            t.steps = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.adam_epsilon {
            t.adam_epsilon = v;
        }
        if let Some(v) = self.init_seed {
            t.init_seed = Some(v);
        }
        if let Some(v) = self.adv_epsilon {
            t.adv_epsilon = v;
        }
        if let Some(v) = self.temperature {
            t.temperature = v;
        }
        if let Some(v) = self.divergence_limit {
            t.divergence_limit = v;
        }
        t
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaeMode {
    #[default]
    Sequential,
    Simultaneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaeSection {
    pub mode: FaeMode,
    pub cutoff: f64,
    pub lambda_schedule: Vec<f64>,
    pub max_iters: usize,
    pub gradient_kind: GradientKind,
    pub accuracy_margin: f64,
    pub saturation: f64,
    /// Simultaneous mode: number of jointly trained models.
    pub models: usize,
    /// Simultaneous mode: weight of the pairwise cosine penalty.
    pub weight: f64,
}

impl Default for FaeSection {
    fn default() -> Self {
        let base = FaeConfig::new(MaskCutoff::new(0.67).expect("valid"), vec![1000.0], 2);
        Self {
            mode: FaeMode::Sequential,
            cutoff: base.cutoff.value(),
            lambda_schedule: base.lambda_schedule,
            max_iters: base.max_iters,
            gradient_kind: base.gradient_kind,
            accuracy_margin: base.accuracy_margin,
            saturation: base.saturation,
            models: 2,
            weight: 1.0,
        }
    }
}

impl FaeSection {
    pub fn to_fae_config(&self) -> Result<FaeConfig> {
        let cutoff = MaskCutoff::new(self.cutoff).map_err(|e| config_err("fae.cutoff", e.to_string()))?;
        let mut cfg = FaeConfig::new(cutoff, self.lambda_schedule.clone(), self.max_iters);
        cfg.gradient_kind = self.gradient_kind;
        cfg.accuracy_margin = self.accuracy_margin;
        cfg.saturation = self.saturation;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Vec<f64>,
}

/// Annotation variants of the data-efficiency experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    None,
    ProRule1,
    ProRule2,
    /// Same mask as `corners`.
    AntiRule1,
    /// Same mask as `top_middle`.
    AntiRule2,
}

impl Variant {
    pub fn rule(self) -> Option<AnnotationRule> {
        match self {
            Variant::None => None,
            Variant::ProRule1 => Some(AnnotationRule::ProRule1),
            Variant::ProRule2 => Some(AnnotationRule::ProRule2),
            Variant::AntiRule1 => Some(AnnotationRule::Corners),
            Variant::AntiRule2 => Some(AnnotationRule::TopMiddle),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::ProRule1 => "pro_rule1",
            Variant::ProRule2 => "pro_rule2",
            Variant::AntiRule1 => "anti_rule1",
            Variant::AntiRule2 => "anti_rule2",
        }
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    (0..=6).map(|e| 10f64.powi(e)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencySection {
    pub variants: Vec<Variant>,
    pub sizes: Vec<usize>,
    #[serde(default = "zero_seed")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_lambda_grid")]
    pub balance_grid: Vec<f64>,
}

fn zero_seed() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpSection {
    /// Test-set rows to write as images.
    pub rows: Vec<usize>,
    /// Also write each model's input-gradient image per row.
    #[serde(default = "yes")]
    pub gradients: bool,
    /// Also write each model's adversarial example per row and attack.
    #[serde(default = "yes")]
    pub adversarial: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Parse(m) => HarnessError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Per-model training sections, in roster order.
    pub fn roster(&self) -> Vec<(String, TrainSection)> {
        if self.models.is_empty() {
            return vec![("model".to_string(), self.train.clone())];
        }
        self.models.iter().map(|m| (m.name.clone(), m.apply(&self.train))).collect()
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(config_err("name", "must not be empty"));
        }
        let d = &self.dataset;
        if d.seed.is_none() {
            return Err(config_err("dataset.seed", "is required"));
        }
        if d.decoy && d.kind != DataKind::Digits {
            return Err(config_err("dataset.decoy", "decoy injection needs the digits dataset"));
        }
        if let Some(f) = d.test_fraction {
            if d.kind != DataKind::IrisCancer {
                return Err(config_err("dataset.test_fraction", "only applies to iris_cancer"));
            }
            if !(f > 0.0 && f < 1.0) {
                return Err(config_err("dataset.test_fraction", format!("must lie in (0, 1), got {f}")));
            }
        }
        let (train, test) = d.sizes();
        if d.kind != DataKind::IrisCancer && (train == 0 || test == 0) {
            return Err(config_err("dataset.train_size", "train and test sizes must be positive"));
        }
        if d.kind == DataKind::Quadrant2d && (train % 2 != 0 || test % 2 != 0) {
            return Err(config_err("dataset.train_size", "quadrant2d sizes must be even"));
        }

        if self.train.seed.is_none() {
            return Err(config_err("train.seed", "is required (or pass --seed)"));
        }
        validate_train("train", &self.train)?;
        let mut names = BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            let field = format!("models[{i}].name");
            if m.name.is_empty() || !m.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(config_err(field, format!("{:?} must be nonempty and use only [A-Za-z0-9_-]", m.name)));
            }
            if !names.insert(m.name.as_str()) {
                return Err(config_err(field, format!("duplicate model name {:?}", m.name)));
            }
            validate_train(&format!("models[{i}]"), &m.apply(&self.train))?;
        }
        for (i, a) in self.attacks.iter().enumerate() {
            a.validate().map_err(|e| config_err(format!("attacks[{i}]"), e.to_string()))?;
        }
        if let Some(f) = &self.fae {
            f.to_fae_config()?;
            if f.lambda_schedule.is_empty() || f.lambda_schedule.iter().any(|l| !(*l >= 0.0)) {
                return Err(config_err("fae.lambda_schedule", "needs at least one nonnegative value"));
            }
            if f.max_iters == 0 {
                return Err(config_err("fae.max_iters", "must be at least 1"));
            }
            if f.mode == FaeMode::Simultaneous && f.models < 2 {
                return Err(config_err("fae.models", "simultaneous mode needs at least two models"));
            }
            if !(f.weight >= 0.0 && f.weight.is_finite()) {
                return Err(config_err("fae.weight", "must be finite and >= 0"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.grid.is_empty() {
                return Err(config_err("sweep.grid", "must not be empty"));
            }
            if s.grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return Err(config_err("sweep.grid", "values must be finite and >= 0"));
            }
        }
        if let Some(e) = &self.efficiency {
            if d.kind != DataKind::ToyColor {
                return Err(config_err("efficiency", "the rule variants are defined for toy_color only"));
            }
            if e.variants.is_empty() {
                return Err(config_err("efficiency.variants", "must not be empty"));
            }
            if e.sizes.is_empty() || e.sizes.iter().any(|&n| n == 0 || n > train) {
                return Err(config_err("efficiency.sizes", format!("sizes must lie in 1..={train}")));
            }
            if e.seeds.is_empty() {
                return Err(config_err("efficiency.seeds", "must not be empty"));
            }
        }
        if let Some(dump) = &self.dump {
            if !d.kind.has_images() {
                return Err(config_err("dump", format!("{} rows are not images", d.kind.name())));
            }
            if let Some(&r) = dump.rows.iter().find(|&&r| r >= test) {
                return Err(config_err("dump.rows", format!("row {r} is outside the {test}-row test set")));
            }
        }
        Ok(())
    }
}

fn validate_train(prefix: &str, t: &TrainSection) -> Result<()> {
    let field = |f: &str| format!("{prefix}.{f}");
    if t.steps == 0 {
        return Err(config_err(field("steps"), "must be at least 1"));
    }
    if t.batch_size == 0 {
        return Err(config_err(field("batch_size"), "must be at least 1"));
    }
    if t.hidden.contains(&0) {
        return Err(config_err(field("hidden"), "layer widths must be positive"));
    }
    if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
        return Err(config_err(field("learning_rate"), "must be positive"));
    }
    t.penalty.validate().map_err(|e| config_err(field("penalty"), e.to_string()))?;
    if let Some(a) = &t.annotation {
        if !(0.0..=1.0).contains(&a.fraction) {
            return Err(config_err(field("annotation.fraction"), "must lie in [0, 1]"));
        }
    }
    if let Some(g) = &t.balance_grid {
        if g.is_empty() || g.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(config_err(field("balance_grid"), "needs positive finite values"));
        }
        if t.defense != Defense::GradReg {
            return Err(config_err(field("balance_grid"), "only applies to defense = \"grad_reg\""));
        }
    }
    if !(t.temperature > 0.0 && t.temperature.is_finite()) {
        return Err(config_err(field("temperature"), "must be positive"));
    }
    if !(t.adv_epsilon >= 0.0 && t.adv_epsilon.is_finite()) {
        return Err(config_err(field("adv_epsilon"), "must be finite and >= 0"));
    }
    if !(t.divergence_limit > 0.0) {
        return Err(config_err(field("divergence_limit"), "must be positive"));
    }
    Ok(())
}
