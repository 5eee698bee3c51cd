//! Input-gradient explanations, annotation builders and the
//! find-another-explanation procedures.

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::autodiff::{Graph, VarId};
use crate::data::{toy_color, Dataset, DatasetKind};
use crate::error::{invalid, Error, Result};
use crate::nn::{accuracy, init_params, Params};
use crate::objectives::{self, cosine_sim_penalty, input_gradient, AnnotationMask, GradientKind, LossTerms, PenaltyKind};
use crate::tensor::Tensor;
use crate::train::{step_seed, train, Annotation, Batcher, Defense, TrainConfig, TrainLog};

/// Per-example input gradients of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub gradients: Tensor,
    pub params_digest: String,
    pub kind: GradientKind,
}

pub fn input_gradients(params: &Params, x: &Tensor, kind: GradientKind, y: Option<&Tensor>) -> Result<Explanation> {
    if x.shape().len() != 2 || x.cols() != params.spec().input() {
        return Err(Error::ShapeMismatch {
            op: "input_gradients",
            lhs: x.shape().to_vec(),
            rhs: vec![params.spec().input()],
        });
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xv = g.leaf(x.clone());
    let gx = input_gradient(&mut g, &bound, xv, kind, y)?;
    Ok(Explanation {
        gradients: g.value(gx).clone(),
        params_digest: params.digest(),
        kind,
    })
}

/// Magnitude-ratio cutoff `c ∈ (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MaskCutoff(f64);

impl MaskCutoff {
    pub fn new(c: f64) -> Result<Self> {
        if c > 0.0 && c <= 1.0 {
            Ok(Self(c))
        } else {
            Err(invalid(format!("mask cutoff must lie in (0, 1], got {c}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for MaskCutoff {
    type Error = Error;

    fn try_from(c: f64) -> Result<Self> {
        Self::new(c)
    }
}

impl From<MaskCutoff> for f64 {
    fn from(c: MaskCutoff) -> f64 {
        c.0
    }
}

/// Marks, per row, the components with `|g_d| / max |g| ≥ c`. Zero rows stay zero.
pub fn mask_topratio(gradients: &Tensor, c: MaskCutoff) -> AnnotationMask {
    let mut out = Tensor::zeros(gradients.shape());
    for i in 0..gradients.rows() {
        let row = gradients.row(i);
        let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            continue;
        }
        for (o, v) in out.row_mut(i).iter_mut().zip(row) {
            if v.abs() / max >= c.0 {
                *o = 1.0;
            }
        }
    }
    AnnotationMask::new(out).expect("binary by construction")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationRule {
    /// The four toy-colour corner pixels.
    Corners,
    /// The three toy-colour top-middle pixels.
    TopMiddle,
    /// Everything except the corners.
    ProRule1,
    /// Everything except the top-middle pixels.
    ProRule2,
    /// The injected decoy swatch of each image.
    Swatch,
    /// The four iris feature columns.
    IrisColumns,
}

impl AnnotationRule {
    pub fn name(self) -> &'static str {
        match self {
            AnnotationRule::Corners => "corners",
            AnnotationRule::TopMiddle => "top_middle",
            AnnotationRule::ProRule1 => "pro_rule1",
            AnnotationRule::ProRule2 => "pro_rule2",
            AnnotationRule::Swatch => "swatch",
            AnnotationRule::IrisColumns => "iris_columns",
        }
    }
}

fn toy_pixels(ds: &Dataset, pixels: &[(usize, usize)], rule: AnnotationRule) -> Result<Vec<usize>> {
    let g = ds
        .geometry
        .filter(|&g| g == toy_color::geometry())
        .ok_or_else(|| invalid(format!("rule {} needs the 5×5×3 toy colour geometry", rule.name())))?;
    Ok(pixels
        .iter()
        .flat_map(|&(r, c)| (0..g.channels).map(move |ch| g.index(r, c, ch)))
        .collect())
}

fn row_mask(n: usize, d: usize, cols: &[usize], complement: bool) -> AnnotationMask {
    let mut row = vec![if complement { 1.0 } else { 0.0 }; d];
    for &c in cols {
        row[c] = if complement { 0.0 } else { 1.0 };
    }
    let data: Vec<f64> = (0..n).flat_map(|_| row.iter().copied()).collect();
    AnnotationMask::new(Tensor::from_parts(vec![n, d], data)).expect("binary")
}

/// Annotation matrix for every row of `ds` under `rule`.
pub fn build_annotation(ds: &Dataset, rule: AnnotationRule) -> Result<AnnotationMask> {
    let (n, d) = (ds.len(), ds.num_features());
    match rule {
        AnnotationRule::Corners => Ok(row_mask(n, d, &toy_pixels(ds, &toy_color::CORNERS, rule)?, false)),
        AnnotationRule::ProRule1 => Ok(row_mask(n, d, &toy_pixels(ds, &toy_color::CORNERS, rule)?, true)),
        AnnotationRule::TopMiddle => Ok(row_mask(n, d, &toy_pixels(ds, &toy_color::TOP_MIDDLE, rule)?, false)),
        AnnotationRule::ProRule2 => Ok(row_mask(n, d, &toy_pixels(ds, &toy_color::TOP_MIDDLE, rule)?, true)),
        AnnotationRule::Swatch => {
            let g = ds.geometry.ok_or_else(|| invalid("swatch annotation needs image geometry"))?;
            let corners = ds
                .swatch_corners
                .as_ref()
                .ok_or_else(|| invalid("swatch annotation needs a decoy dataset"))?;
            let mut t = Tensor::zeros(&[n, d]);
            for (i, corner) in corners.iter().enumerate() {
                let row = t.row_mut(i);
                for p in corner.swatch_pixels(g) {
                    row[p] = 1.0;
                }
            }
            AnnotationMask::new(t)
        }
        AnnotationRule::IrisColumns => {
            if ds.kind != DatasetKind::IrisCancer {
                return Err(invalid("iris_columns annotation needs the iris/cancer dataset"));
            }
            Ok(row_mask(n, d, &crate::data::iris_cancer::IRIS_COLUMNS, false))
        }
    }
}

/// Pooled fraction of selected components falling in each region:
/// `Σ(selected ∧ region) / Σ selected`. Zero when nothing is selected.
pub fn rule_mass(gradients: &Tensor, regions: &[&AnnotationMask], c: MaskCutoff) -> Result<Vec<f64>> {
    let selected = mask_topratio(gradients, c);
    let total = selected.count();
    regions
        .iter()
        .map(|r| {
            if r.shape() != selected.shape() {
                return Err(Error::ShapeMismatch {
                    op: "rule_mass",
                    lhs: r.shape().to_vec(),
                    rhs: selected.shape().to_vec(),
                });
            }
            let hit = selected
                .tensor()
                .data()
                .iter()
                .zip(r.tensor().data())
                .filter(|(&s, &m)| s == 1.0 && m == 1.0)
                .count();
            Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
        })
        .collect()
}

/// `(corner mass, top-middle mass)` of a toy-colour model's explanation.
pub fn toy_rule_masses(params: &Params, ds: &Dataset, c: MaskCutoff) -> Result<(f64, f64)> {
    let expl = input_gradients(params, &ds.x, GradientKind::SumLogProbs, None)?;
    let corners = build_annotation(ds, AnnotationRule::Corners)?;
    let top = build_annotation(ds, AnnotationRule::TopMiddle)?;
    let m = rule_mass(&expl.gradients, &[&corners, &top], c)?;
    Ok((m[0], m[1]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaeConfig {
    pub cutoff: MaskCutoff,
    /// λ₁ for iterations 1, 2, …; the last entry repeats.
    pub lambda_schedule: Vec<f64>,
    /// Iterations after the unregularized model.
    pub max_iters: usize,
    #[serde(default = "default_gradient_kind")]
    pub gradient_kind: GradientKind,
    /// Stop once training accuracy falls below `1/K + margin`.
    #[serde(default = "default_margin")]
    pub accuracy_margin: f64,
    /// Stop once the annotation covers more than this fraction of entries.
    #[serde(default = "default_saturation")]
    pub saturation: f64,
}

fn default_gradient_kind() -> GradientKind {
    GradientKind::SumLogProbs
}

fn default_margin() -> f64 {
    0.1
}

fn default_saturation() -> f64 {
    0.95
}

impl FaeConfig {
    pub fn new(cutoff: MaskCutoff, lambda_schedule: Vec<f64>, max_iters: usize) -> Self {
        Self {
            cutoff,
            lambda_schedule,
            max_iters,
            gradient_kind: default_gradient_kind(),
            accuracy_margin: default_margin(),
            saturation: default_saturation(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaeIteration {
    pub index: usize,
    pub params: Params,
    /// The annotation this model was trained under.
    pub annotation: AnnotationMask,
    pub lambda1: f64,
    pub train_accuracy: f64,
    pub log: TrainLog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FaeStop {
    MaxIters,
    Accuracy,
    Saturated,
}

/// `A₀ = 0`; `θᵢ` is trained under `Aᵢ`; `Aᵢ₊₁ = Aᵢ ∪ M_c[f_X|θᵢ]` on the training set.
pub fn fae_sequential(ds: &Dataset, base: &TrainConfig, fae: &FaeConfig) -> Result<(Vec<FaeIteration>, FaeStop)> {
    if fae.max_iters == 0 {
        return Err(invalid("fae max_iters must be at least 1"));
    }
    if fae.lambda_schedule.is_empty() {
        return Err(invalid("fae lambda schedule is empty"));
    }
    let floor = 1.0 / ds.num_classes() as f64 + fae.accuracy_margin;
    let mut annotation = AnnotationMask::zeros(ds.len(), ds.num_features());
    let mut out = Vec::new();
    for i in 0..=fae.max_iters {
        let mut cfg = base.clone();
        let lambda1 = if i == 0 {
            0.0
        } else {
            fae.lambda_schedule[(i - 1).min(fae.lambda_schedule.len() - 1)]
        };
        cfg.defense = if i == 0 { Defense::None } else { Defense::GradReg };
        cfg.penalty.kind = PenaltyKind::Rrr;
        cfg.penalty.lambda1 = lambda1;
        cfg.annotation = Annotation::Explicit(annotation.clone());
        let (params, log) = train(ds, &cfg)?;
        let train_accuracy = accuracy(&params, &ds.x, &ds.y)?;
        let expl = input_gradients(&params, &ds.x, fae.gradient_kind, Some(&ds.y))?;
        out.push(FaeIteration {
            index: i,
            params,
            annotation: annotation.clone(),
            lambda1,
            train_accuracy,
            log,
        });
        if train_accuracy < floor {
            return Ok((out, FaeStop::Accuracy));
        }
        if annotation.coverage() > fae.saturation {
            return Ok((out, FaeStop::Saturated));
        }
        annotation = annotation.union(&mask_topratio(&expl.gradients, fae.cutoff))?;
    }
    Ok((out, FaeStop::MaxIters))
}

/// One step of the simultaneous procedure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulRecord {
    pub step: usize,
    pub losses: Vec<f64>,
    /// `(a, b, squared cosine penalty)` for `a < b`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Jointly trains `m` models, penalizing the squared cosine similarity of
/// every pair of input gradients. Model `a` starts from `init_seed + a`.
pub fn fae_simultaneous(ds: &Dataset, cfg: &TrainConfig, m: usize, weight: f64) -> Result<(Vec<Params>, Vec<SimulRecord>)> {
    if m < 2 {
        return Err(invalid("simultaneous fae needs at least two models"));
    }
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(invalid("penalty weight must be finite and >= 0"));
    }
    cfg.validate(ds)?;
    let base_seed = cfg.init_seed.unwrap_or(cfg.seed);
    let mut models: Vec<Params> = (0..m as u64).map(|a| init_params(&cfg.spec, base_seed + a)).collect();
    let mut states: Vec<AdamState> = models.iter().map(|p| AdamState::new(p, cfg.adam)).collect();
    let mut batcher = Batcher::new(ds.len(), cfg.batch_size, None, cfg.seed);
    let penalty = (cfg.defense == Defense::GradReg).then_some(&cfg.penalty);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = batcher.next_batch();
        let xb = ds.x.select_rows(&idx);
        let yb = ds.y.select_rows(&idx);
        let mut g = Graph::new();
        let xv = g.leaf(xb);
        let mut terms: Vec<LossTerms> = Vec::with_capacity(m);
        let mut grads: Vec<VarId> = Vec::with_capacity(m);
        for p in &models {
            let bound = p.bind(&mut g);
            let t = objectives::objective_bound(
                &mut g,
                &bound,
                xv,
                &yb,
                None,
                penalty,
                cfg.penalty.lambda2,
                step_seed(cfg.seed, step),
            )?;
            if weight > 0.0 {
                grads.push(input_gradient(&mut g, &bound, xv, GradientKind::SumLogProbs, None)?);
            }
            terms.push(t);
        }
        let mut total = terms[0].total;
        for t in &terms[1..] {
            total = g.add(total, t.total)?;
        }
        let mut pairs = Vec::new();
        if weight > 0.0 {
            for a in 0..m {
                for b in a + 1..m {
                    let c = cosine_sim_penalty(&mut g, grads[a], grads[b])?;
                    pairs.push((a, b, g.value(c).item()));
                    let wc = g.scale(c, weight)?;
                    total = g.add(total, wc)?;
                }
            }
        }
        let value = g.value(total).item();
        if !value.is_finite() || value > cfg.divergence_limit * m as f64 {
            return Err(Error::Diverged { step, value });
        }
        let vars: Vec<VarId> = terms.iter().flat_map(|t| t.params.vars()).collect();
        let mut all = g.grad(total, &vars)?.into_iter();
        let losses = terms.iter().map(|t| g.value(t.total).item()).collect();
        drop(g);
        for (p, s) in models.iter_mut().zip(&mut states) {
            let n = p.tensors().count();
            let gp: Vec<Tensor> = all.by_ref().take(n).collect();
            s.step(p, &gp)?;
        }
        log.push(SimulRecord { step, losses, pairs });
    }
    Ok((models, log))
}

/// Mean per-example `|cos|` between two models' input gradients.
pub fn mean_abs_cosine(a: &Params, b: &Params, x: &Tensor) -> Result<f64> {
    let ga = input_gradients(a, x, GradientKind::SumLogProbs, None)?.gradients;
    let gb = input_gradients(b, x, GradientKind::SumLogProbs, None)?.gradients;
    let sq = objectives::squared_cosine_rows(&ga, &gb)?;
    Ok(sq.iter().map(|v| v.sqrt()).sum::<f64>() / sq.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topratio_example() {
        let g = Tensor::matrix(2, 3, vec![3.0, -2.1, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let m = mask_topratio(&g, MaskCutoff::new(0.67).unwrap());
        assert_eq!(m.tensor().data(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let m = mask_topratio(&Tensor::matrix(1, 3, vec![2.0, -2.0, 1.0]).unwrap(), MaskCutoff::new(1.0).unwrap());
        assert_eq!(m.tensor().data(), &[1.0, 1.0, 0.0]);
        assert!(MaskCutoff::new(0.0).is_err());
        assert!(MaskCutoff::new(1.5).is_err());
    }

    #[test]
    fn toy_annotation_counts() {
        let ds = crate::data::gen_toy_color(4, 0).unwrap();
        let count = |r| {
            let m = build_annotation(&ds, r).unwrap();
            (0..4).map(|i| m.tensor().row(i).iter().sum::<f64>()).collect::<Vec<_>>()
        };
        assert_eq!(count(AnnotationRule::Corners), vec![12.0; 4]);
        assert_eq!(count(AnnotationRule::ProRule1), vec![63.0; 4]);
        assert_eq!(count(AnnotationRule::TopMiddle), vec![9.0; 4]);
        assert_eq!(count(AnnotationRule::ProRule2), vec![66.0; 4]);
        assert!(build_annotation(&ds, AnnotationRule::Swatch).is_err());
        assert!(build_annotation(&ds, AnnotationRule::IrisColumns).is_err());
    }

    #[test]
    fn rule_mass_partition() {
        let g = Tensor::matrix(1, 4, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let a = AnnotationMask::new(Tensor::matrix(1, 4, vec![1.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
        let b = AnnotationMask::new(Tensor::matrix(1, 4, vec![0.0, 0.0, 1.0, 1.0]).unwrap()).unwrap();
        let m = rule_mass(&g, &[&a, &b], MaskCutoff::new(0.5).unwrap()).unwrap();
        assert!((m[0] - 2.0 / 3.0).abs() < 1e-15 && (m[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
