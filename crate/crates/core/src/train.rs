//! Minibatch Adam training for every defense and regularizer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::attacks::fgsm;
use crate::autodiff::Graph;
use crate::data::{one_hot, Dataset};
use crate::error::{invalid, Error, Result};
use crate::explain::{build_annotation, AnnotationRule};
use crate::nn::{accuracy, init_params, predict, BoundParams, LayerSpec, Params};
use crate::objectives::{self, assemble, cross_entropy, AnnotationMask, LossTerms, PenaltyConfig, PenaltyKind};
use crate::tensor::Tensor;

/// Default loss above which training is treated as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    #[default]
    None,
    GradReg,
    AdvTrain,
    Distill,
}

/// Where the annotation matrix for a run comes from.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Annotation {
    #[default]
    None,
    Explicit(AnnotationMask),
    /// A builder rule applied to a seeded `fraction` of the training rows.
    Rule { rule: AnnotationRule, fraction: f64 },
}

impl Annotation {
    pub fn resolve(&self, ds: &Dataset, seed: u64) -> Result<Option<AnnotationMask>> {
        match self {
            Annotation::None => Ok(None),
            Annotation::Explicit(m) => {
                if m.shape() != [ds.len(), ds.num_features()] {
                    return Err(invalid(format!(
                        "annotation mask {:?} does not match dataset {}×{}",
                        m.shape(),
                        ds.len(),
                        ds.num_features()
                    )));
                }
                Ok(Some(m.clone()))
            }
            Annotation::Rule { rule, fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(invalid(format!("annotation fraction must lie in [0, 1], got {fraction}")));
                }
                let full = build_annotation(ds, *rule)?;
                let n = (fraction * ds.len() as f64).round() as usize;
                let mut rows: Vec<usize> = (0..ds.len()).collect();
                rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x616e_6e6f));
                rows.truncate(n);
                rows.sort_unstable();
                Ok(Some(full.restrict_rows(&rows)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub spec: LayerSpec,
    pub penalty: PenaltyConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Seed of the initial parameters; defaults to `seed`.
    pub init_seed: Option<u64>,
    pub defense: Defense,
    pub adv_epsilon: f64,
    pub temperature: f64,
    pub annotation: Annotation,
    /// Probe accuracy is logged every this many steps (0 = only at the end).
    pub log_every: usize,
    /// Training aborts when the batch loss exceeds this or is non-finite.
    pub divergence_limit: f64,
}

impl TrainConfig {
    pub fn new(spec: LayerSpec) -> Self {
        Self {
            spec,
            penalty: PenaltyConfig::default(),
            batch_size: 256,
            steps: 1000,
            adam: AdamConfig::default(),
            seed: 0,
            init_seed: None,
            defense: Defense::None,
            adv_epsilon: 0.3,
            temperature: 50.0,
            annotation: Annotation::None,
            log_every: 0,
            divergence_limit: DIVERGENCE_LIMIT,
        }
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > ds.len() {
            return Err(invalid(format!(
                "batch size {} must lie in 1..={} (dataset size)",
                self.batch_size,
                ds.len()
            )));
        }
        if self.spec.input() != ds.num_features() || self.spec.output() != ds.num_classes() {
            return Err(invalid(format!(
                "layer spec {:?} does not fit {} features / {} classes",
                self.spec.sizes(),
                ds.num_features(),
                ds.num_classes()
            )));
        }
        self.penalty.validate()?;
        if !(self.adv_epsilon >= 0.0) {
            return Err(invalid("adversarial epsilon must be >= 0"));
        }
        crate::nn::check_temperature(self.temperature)?;
        if !(self.divergence_limit > 0.0) {
            return Err(invalid("divergence limit must be positive"));
        }
        Ok(())
    }

    pub fn initial_params(&self) -> Params {
        init_params(&self.spec, self.init_seed.unwrap_or(self.seed))
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Unweighted adversarial cross-entropy (adversarial training only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversarial_cross_entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

/// Deterministic epoch-by-epoch minibatch order. Annotated rows are spread
/// evenly over each epoch so every one of them is seen once per epoch.
#[derive(Clone, Debug)]
pub struct Batcher {
    rng: ChaCha8Rng,
    annotated: Vec<usize>,
    plain: Vec<usize>,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize, mask: Option<&AnnotationMask>, seed: u64) -> Self {
        let (annotated, plain): (Vec<usize>, Vec<usize>) = match mask {
            Some(m) => (0..n).partition(|&i| m.row_annotated(i)),
            None => (Vec::new(), (0..n).collect()),
        };
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            annotated,
            plain,
            batch_size,
            order: Vec::new(),
            cursor: 0,
        }
    }

    fn refill(&mut self) {
        let (m, n) = (self.annotated.len(), self.annotated.len() + self.plain.len());
        if m == 0 || m == n {
            let mut all: Vec<usize> = self.annotated.iter().chain(&self.plain).copied().collect();
            all.sort_unstable();
            all.shuffle(&mut self.rng);
            self.order = all;
        } else {
            let mut a = self.annotated.clone();
            let mut p = self.plain.clone();
            a.shuffle(&mut self.rng);
            p.shuffle(&mut self.rng);
            let mut order = Vec::with_capacity(n);
            let (mut ai, mut pi) = (0, 0);
            for slot in 0..n {
                // Annotated row j sits at slot ⌊j·n/m⌋.
                if ai < m && slot == ai * n / m {
                    order.push(a[ai]);
                    ai += 1;
                } else {
                    order.push(p[pi]);
                    pi += 1;
                }
            }
            self.order = order;
        }
        self.cursor = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.refill();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Per-(seed, step) seed for stochastic penalties.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    let mut z = seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_049b_133e_b111);
    z ^ (z >> 31)
}

pub(crate) struct Batch<'a> {
    pub step: usize,
    pub x: Tensor,
    pub y: Tensor,
    pub mask: Option<AnnotationMask>,
    pub params: &'a Params,
}

pub(crate) struct StepLoss {
    pub terms: LossTerms,
    pub adversarial: Option<f64>,
}

/// The shared Adam loop. `loss` builds the batch objective on `g`.
pub(crate) fn optimize<F>(
    mut params: Params,
    x: &Tensor,
    y: &Tensor,
    mask: Option<&AnnotationMask>,
    cfg: &TrainConfig,
    probe: Option<&Dataset>,
    mut loss: F,
) -> Result<(Params, TrainLog)>
where
    F: FnMut(&mut Graph, &BoundParams, &Batch) -> Result<StepLoss>,
{
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut batcher = Batcher::new(x.rows(), cfg.batch_size, mask, cfg.seed);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let idx = batcher.next_batch();
        let batch = Batch {
            step,
            x: x.select_rows(&idx),
            y: y.select_rows(&idx),
            mask: mask.map(|m| m.select_rows(&idx)),
            params: &params,
        };
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let out = loss(&mut g, &bound, &batch)?;
        let v = out.terms.values(&g);
        if !v.total.is_finite() || v.total > cfg.divergence_limit {
            return Err(Error::Diverged { step, value: v.total });
        }
        let grads = g.grad(out.terms.total, &bound.vars())?;
        drop(g);
        adam.step(&mut params, &grads)?;

        let last = step + 1 == cfg.steps;
        let probe_accuracy = match probe {
            Some(p) if last || (cfg.log_every > 0 && step % cfg.log_every == 0) => Some(accuracy(&params, &p.x, &p.y)?),
            _ => None,
        };
        log.records.push(StepRecord {
            step,
            total: v.total,
            cross_entropy: v.cross_entropy,
            penalty: v.penalty,
            weight_decay: v.weight_decay,
            lambda1: out.terms.lambda1,
            lambda2: out.terms.lambda2,
            adversarial_cross_entropy: out.adversarial,
            probe_accuracy,
        });
    }
    Ok((params, log))
}

fn penalty_for(cfg: &TrainConfig) -> Option<&PenaltyConfig> {
    (cfg.defense == Defense::GradReg).then_some(&cfg.penalty)
}

/// Trains on the configured loss: cross-entropy and weight decay, plus the
/// gradient penalty when `defense = grad_reg`. Adversarial training and
/// distillation dispatch to their own loops (distillation returns the student).
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(Params, TrainLog)> {
    train_with_probe(ds, cfg, None)
}

pub fn train_with_probe(ds: &Dataset, cfg: &TrainConfig, probe: Option<&Dataset>) -> Result<(Params, TrainLog)> {
    match cfg.defense {
        Defense::AdvTrain => return adversarial_train_with_probe(ds, cfg, probe),
        Defense::Distill => {
            let out = distill_train_with_probe(ds, cfg, probe)?;
            return Ok((out.student, out.student_log));
        }
        Defense::None | Defense::GradReg => {}
    }
    cfg.validate(ds)?;
    let mask = cfg.annotation.resolve(ds, cfg.seed)?;
    let penalty = penalty_for(cfg);
    // Annotated rows are spread over batches only while they are penalized.
    let mask_for_batches = penalty.filter(|p| p.kind == PenaltyKind::Rrr && p.lambda1 > 0.0).and(mask.as_ref());
    optimize(cfg.initial_params(), &ds.x, &ds.y, mask_for_batches, cfg, probe, |g, bound, b| {
        let xv = g.leaf(b.x.clone());
        let terms = objectives::objective_bound(
            g,
            bound,
            xv,
            &b.y,
            b.mask.as_ref(),
            penalty,
            cfg.penalty.lambda2,
            step_seed(cfg.seed, b.step),
        )?;
        Ok(StepLoss { terms, adversarial: None })
    })
}

/// `½(H(y, ŷ(X)) + H(y, ŷ(X_adv))) + λ₂‖θ‖²`, where `X_adv` is FGSM against
/// the model's own predictions and is held constant.
pub fn adversarial_train(ds: &Dataset, cfg: &TrainConfig) -> Result<(Params, TrainLog)> {
    adversarial_train_with_probe(ds, cfg, None)
}

pub fn adversarial_train_with_probe(ds: &Dataset, cfg: &TrainConfig, probe: Option<&Dataset>) -> Result<(Params, TrainLog)> {
    cfg.validate(ds)?;
    let k = ds.num_classes();
    optimize(cfg.initial_params(), &ds.x, &ds.y, None, cfg, probe, |g, bound, b| {
        let predicted = one_hot(&predict(b.params, &b.x)?, k)?;
        let x_adv = fgsm(b.params, &b.x, &predicted, cfg.adv_epsilon)?;
        let xv = g.leaf(b.x.clone());
        let lp = bound.log_probs(g, xv)?;
        let ce = cross_entropy(g, lp, &b.y)?;
        // An unperturbed batch reuses the clean term so ε = 0 reproduces plain training.
        let ce_adv = if x_adv == b.x {
            ce
        } else {
            let xa = g.constant(x_adv);
            let lpa = bound.log_probs(g, xa)?;
            cross_entropy(g, lpa, &b.y)?
        };
        let both = g.add(ce, ce_adv)?;
        let half = g.scale(both, 0.5)?;
        let zero = g.constant(Tensor::scalar(0.0));
        let terms = assemble(g, bound, xv, half, zero, 0.0, cfg.penalty.lambda2)?;
        let adversarial = Some(g.value(ce_adv).item());
        Ok(StepLoss { terms, adversarial })
    })
}

#[derive(Clone, Debug)]
pub struct Distilled {
    pub teacher: Params,
    pub student: Params,
    pub teacher_log: TrainLog,
    pub student_log: TrainLog,
}

fn train_at_temperature(
    init: Params,
    ds: &Dataset,
    targets: &Tensor,
    cfg: &TrainConfig,
    probe: Option<&Dataset>,
) -> Result<(Params, TrainLog)> {
    let t = cfg.temperature;
    optimize(init, &ds.x, targets, None, cfg, probe, |g, bound, b| {
        let xv = g.leaf(b.x.clone());
        let lp = bound.log_probs_at(g, xv, t)?;
        let ce = cross_entropy(g, lp, &b.y)?;
        let zero = g.constant(Tensor::scalar(0.0));
        let terms = assemble(g, bound, xv, ce, zero, 0.0, cfg.penalty.lambda2)?;
        Ok(StepLoss { terms, adversarial: None })
    })
}

/// Defensive distillation: a teacher trained at temperature `T` on one-hot
/// labels, then a fresh student trained at `T` on the teacher's detached
/// probabilities. Both are meant to be evaluated at `T = 1`.
pub fn distill_train(ds: &Dataset, cfg: &TrainConfig) -> Result<Distilled> {
    distill_train_with_probe(ds, cfg, None)
}

pub fn distill_train_with_probe(ds: &Dataset, cfg: &TrainConfig, probe: Option<&Dataset>) -> Result<Distilled> {
    cfg.validate(ds)?;
    let (teacher, teacher_log) = train_at_temperature(cfg.initial_params(), ds, &ds.y, cfg, probe)?;
    let soft = objectives::distill_targets(&teacher, &ds.x, cfg.temperature)?;
    let student_init = init_params(&cfg.spec, cfg.init_seed.unwrap_or(cfg.seed).wrapping_add(1));
    let (student, student_log) = train_at_temperature(student_init, ds, &soft, cfg, probe)?;
    Ok(Distilled {
        teacher,
        student,
        teacher_log,
        student_log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaBalance {
    pub chosen: f64,
    /// Initial summed cross-entropy over the training set.
    pub cross_entropy: f64,
    /// Initial unweighted penalty over the training set.
    pub penalty: f64,
    /// `(λ, λ·penalty / cross_entropy)` for every grid point.
    pub ratios: Vec<(f64, f64)>,
}

/// Initial (cross-entropy, unweighted penalty) over the whole training set.
pub fn initial_terms(ds: &Dataset, cfg: &TrainConfig) -> Result<(f64, f64)> {
    cfg.validate(ds)?;
    let mask = cfg.annotation.resolve(ds, cfg.seed)?;
    let params = cfg.initial_params();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xv = g.leaf(ds.x.clone());
    let penalty = PenaltyConfig { lambda1: 1.0, ..cfg.penalty };
    let terms = objectives::objective_bound(
        &mut g,
        &bound,
        xv,
        &ds.y,
        mask.as_ref(),
        Some(&penalty),
        0.0,
        step_seed(cfg.seed, 0),
    )?;
    let v = terms.values(&g);
    Ok((v.cross_entropy, v.penalty))
}

/// Picks the grid λ whose initial `λ·penalty / cross_entropy` is nearest 1
/// on a log scale.
pub fn balance_lambda(ds: &Dataset, cfg: &TrainConfig, grid: &[f64]) -> Result<LambdaBalance> {
    if grid.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    if grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(invalid("lambda grid values must be positive and finite"));
    }
    let (ce, pen) = initial_terms(ds, cfg)?;
    if pen == 0.0 {
        return Err(invalid(
            "penalty term is zero at initialization; check that the annotation matrix is nonempty",
        ));
    }
    let ratios: Vec<(f64, f64)> = grid.iter().map(|&l| (l, l * pen / ce)).collect();
    let chosen = ratios
        .iter()
        .min_by(|a, b| a.1.log10().abs().total_cmp(&b.1.log10().abs()))
        .map(|&(l, _)| l)
        .expect("grid nonempty");
    Ok(LambdaBalance {
        chosen,
        cross_entropy: ce,
        penalty: pen,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batcher_covers_epoch_and_spreads_annotations() {
        let mut m = Tensor::zeros(&[20, 2]);
        for i in [3, 7, 11, 19] {
            m.row_mut(i)[0] = 1.0;
        }
        let mask = AnnotationMask::new(m).unwrap();
        let mut b = Batcher::new(20, 5, Some(&mask), 4);
        for _ in 0..3 {
            let mut seen = Vec::new();
            for _ in 0..4 {
                let batch = b.next_batch();
                assert_eq!(batch.len(), 5);
                assert_eq!(batch.iter().filter(|&&i| mask.row_annotated(i)).count(), 1);
                seen.extend(batch);
            }
            seen.sort_unstable();
            assert_eq!(seen, (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batcher_without_annotations_is_plain_shuffle() {
        let mut a = Batcher::new(10, 4, None, 1);
        let mut b = Batcher::new(10, 4, Some(&AnnotationMask::zeros(10, 3)), 1);
        let mut c = Batcher::new(10, 4, Some(&AnnotationMask::new(Tensor::ones(&[10, 3])).unwrap()), 1);
        for _ in 0..6 {
            let x = a.next_batch();
            assert_eq!(x, b.next_batch());
            assert_eq!(x, c.next_batch());
        }
    }

    #[test]
    fn step_seed_varies() {
        assert_ne!(step_seed(0, 0), step_seed(0, 1));
        assert_ne!(step_seed(0, 1), step_seed(1, 1));
        assert_eq!(step_seed(5, 9), step_seed(5, 9));
    }
}
