//! Losses and input-gradient penalties.
//!
//! Every loss is a sum over the batch. Penalties that depend on an input
//! gradient record that gradient with [`Graph::grad_recorded`], so their
//! parameter gradients are exact rather than stop-gradient approximations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, VarId};
use crate::error::{invalid, Error, Result};
use crate::nn::{check_temperature, BoundParams, Params};
use crate::tensor::Tensor;

/// Stabilizer in the squared-cosine denominator.
pub const COSINE_EPS: f64 = 1e-6;

/// Binary `N × D` matrix; a 1 marks a feature that should be irrelevant.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationMask(Tensor);

impl AnnotationMask {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(invalid(format!("annotation mask must be N×D, got {:?}", t.shape())));
        }
        if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid("annotation mask entries must be 0 or 1"));
        }
        Ok(Self(t))
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self(Tensor::zeros(&[n, d]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn is_zero(&self) -> bool {
        self.0.data().iter().all(|&v| v == 0.0)
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// Fraction of entries set.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.0.numel() as f64
    }

    pub fn row_annotated(&self, i: usize) -> bool {
        self.0.row(i).contains(&1.0)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self(self.0.select_rows(idx))
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        Ok(Self(self.0.zip_map(&other.0, "mask_union", |a, b| a.max(b))?))
    }

    /// Elementwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.0.data().iter().zip(other.0.data()).all(|(&a, &b)| a <= b)
    }

    /// Keeps only the given rows annotated; all others are cleared.
    pub fn restrict_rows(&self, rows: &[usize]) -> Self {
        let mut t = Tensor::zeros(self.0.shape());
        for &i in rows {
            t.row_mut(i).copy_from_slice(self.0.row(i));
        }
        Self(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// Masked squared input gradient of the summed log-probabilities.
    Rrr,
    /// Squared L2 norm of the input gradient of the cross-entropy.
    Doubleback,
    /// Squared L2 norm of the input gradient of the cross-entropy against uniform labels.
    Certainty,
    /// L1 norm of the input gradient of the cross-entropy.
    L1Grad,
    /// Stochastic estimate of the squared Frobenius norm of the input Hessian.
    HessianEst,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 5] = [
        PenaltyKind::Rrr,
        PenaltyKind::Doubleback,
        PenaltyKind::Certainty,
        PenaltyKind::L1Grad,
        PenaltyKind::HessianEst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Rrr => "rrr",
            PenaltyKind::Doubleback => "doubleback",
            PenaltyKind::Certainty => "certainty",
            PenaltyKind::L1Grad => "l1_grad",
            PenaltyKind::HessianEst => "hessian_est",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    /// Explanation / gradient penalty strength.
    #[serde(alias = "lambda")]
    pub lambda1: f64,
    /// Weight decay.
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_noise")]
    pub n_noise: usize,
}

fn default_lambda2() -> f64 {
    1e-4
}

fn default_sigma() -> f64 {
    1e-2
}

fn default_noise() -> usize {
    1
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            kind: PenaltyKind::Rrr,
            lambda1: 1000.0,
            lambda2: default_lambda2(),
            sigma: default_sigma(),
            n_noise: default_noise(),
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(invalid("penalty strengths must be non-negative"));
        }
        if self.kind == PenaltyKind::HessianEst && !(self.sigma > 0.0 && self.n_noise >= 1) {
            return Err(invalid("hessian estimator needs sigma > 0 and n_noise >= 1"));
        }
        Ok(())
    }
}

/// Scalar nodes of one loss evaluation. `total = cross_entropy + λ₁·penalty + λ₂·weight_decay`.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: VarId,
    pub cross_entropy: VarId,
    /// Unweighted penalty.
    pub penalty: VarId,
    /// Unweighted `Σ θ²`.
    pub weight_decay: VarId,
    pub lambda1: f64,
    pub lambda2: f64,
    pub params: BoundParams,
    pub x: VarId,
}

/// Plain values of a [`LossTerms`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TermValues {
    pub total: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
    pub weight_decay: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> TermValues {
        TermValues {
            total: g.value(self.total).item(),
            cross_entropy: g.value(self.cross_entropy).item(),
            penalty: g.value(self.penalty).item(),
            weight_decay: g.value(self.weight_decay).item(),
        }
    }
}

fn check_rows(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

/// `Σₙ Σₖ −yₙₖ log ŷₙₖ`.
pub fn cross_entropy(g: &mut Graph, log_probs: VarId, y: &Tensor) -> Result<VarId> {
    check_rows("cross_entropy", g.shape(log_probs), y.shape())?;
    let yv = g.constant(y.clone());
    let prod = g.mul(yv, log_probs)?;
    let s = g.sum(prod)?;
    g.neg(s)
}

/// Which scalar an input gradient is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    /// `Σₖ log ŷₖ` per example.
    SumLogProbs,
    /// Probability of the predicted class.
    Prob,
    /// Cross-entropy against the true label.
    TrueLabelCe,
}

/// Input gradient `N × D` of the selected scalar, recorded on `g`.
pub fn input_gradient(
    g: &mut Graph,
    params: &BoundParams,
    x: VarId,
    kind: GradientKind,
    y: Option<&Tensor>,
) -> Result<VarId> {
    let lp = params.log_probs(g, x)?;
    let scalar = match kind {
        GradientKind::SumLogProbs => g.sum(lp)?,
        GradientKind::Prob => {
            let pred = g.value(lp).argmax_rows();
            let k = g.shape(lp)[1];
            let mut mask = Tensor::zeros(g.shape(lp));
            for (i, &c) in pred.iter().enumerate() {
                mask.data_mut()[i * k + c] = 1.0;
            }
            let p = g.exp(lp)?;
            let m = g.constant(mask);
            let picked = g.mul(p, m)?;
            g.sum(picked)?
        }
        GradientKind::TrueLabelCe => {
            let y = y.ok_or_else(|| invalid("true_label_ce gradients need labels"))?;
            cross_entropy(g, lp, y)?
        }
    };
    Ok(g.grad_recorded(scalar, &[x])?[0])
}

fn loss_gradient(g: &mut Graph, params: &BoundParams, x: VarId, targets: &Tensor) -> Result<VarId> {
    let lp = params.log_probs(g, x)?;
    let h = cross_entropy(g, lp, targets)?;
    Ok(g.grad_recorded(h, &[x])?[0])
}

fn squared_norm(g: &mut Graph, v: VarId) -> Result<VarId> {
    let sq = g.square(v)?;
    g.sum(sq)
}

/// Unweighted penalty of `kind` for one batch.
pub fn raw_penalty(
    g: &mut Graph,
    params: &BoundParams,
    x: VarId,
    y: &Tensor,
    mask: Option<&AnnotationMask>,
    cfg: &PenaltyConfig,
    noise_seed: u64,
) -> Result<VarId> {
    match cfg.kind {
        PenaltyKind::Rrr => {
            let Some(mask) = mask.filter(|m| !m.is_zero()) else {
                return Ok(g.constant(Tensor::scalar(0.0)));
            };
            check_rows("rrr_loss", g.shape(x), mask.shape())?;
            let gx = input_gradient(g, params, x, GradientKind::SumLogProbs, None)?;
            let a = g.constant(mask.tensor().clone());
            let masked = g.mul(a, gx)?;
            squared_norm(g, masked)
        }
        PenaltyKind::Doubleback => {
            let gx = loss_gradient(g, params, x, y)?;
            squared_norm(g, gx)
        }
        PenaltyKind::Certainty => {
            let (n, k) = (g.shape(x)[0], params_output(g, params));
            let uniform = Tensor::full(&[n, k], 1.0 / k as f64);
            let gx = loss_gradient(g, params, x, &uniform)?;
            squared_norm(g, gx)
        }
        PenaltyKind::L1Grad => {
            let gx = loss_gradient(g, params, x, y)?;
            let a = g.abs(gx)?;
            g.sum(a)
        }
        PenaltyKind::HessianEst => {
            let y = y.clone();
            hessian_norm_estimate_with(
                g,
                x,
                |g, xe| {
                    let lp = params.log_probs(g, xe)?;
                    cross_entropy(g, lp, &y)
                },
                cfg.sigma,
                cfg.n_noise,
                noise_seed,
            )
        }
    }
}

fn params_output(g: &Graph, params: &BoundParams) -> usize {
    let vars = params.vars();
    g.shape(*vars.last().unwrap())[0]
}

/// Full training objective for one batch on already-bound parameters.
/// With `penalty = None` (or `λ₁ = 0`) the penalty node is a constant zero.
pub fn objective_bound(
    g: &mut Graph,
    params: &BoundParams,
    x: VarId,
    y: &Tensor,
    mask: Option<&AnnotationMask>,
    penalty: Option<&PenaltyConfig>,
    lambda2: f64,
    noise_seed: u64,
) -> Result<LossTerms> {
    let lp = params.log_probs(g, x)?;
    check_rows("cross_entropy", g.shape(lp), y.shape())?;
    let ce = cross_entropy(g, lp, y)?;
    let (pen, lambda1) = match penalty {
        Some(cfg) if cfg.lambda1 > 0.0 => {
            cfg.validate()?;
            (raw_penalty(g, params, x, y, mask, cfg, noise_seed)?, cfg.lambda1)
        }
        Some(cfg) => (g.constant(Tensor::scalar(0.0)), cfg.lambda1),
        None => (g.constant(Tensor::scalar(0.0)), 0.0),
    };
    assemble(g, params, x, ce, pen, lambda1, lambda2)
}

/// Combines a data term and an unweighted penalty into
/// `ce + λ₁·penalty + λ₂·‖θ‖²`.
pub fn assemble(
    g: &mut Graph,
    params: &BoundParams,
    x: VarId,
    ce: VarId,
    penalty: VarId,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossTerms> {
    let wd = params.squared_norm(g)?;
    let weighted_pen = g.scale(penalty, lambda1)?;
    let weighted_wd = g.scale(wd, lambda2)?;
    let t = g.add(ce, weighted_pen)?;
    let total = g.add(t, weighted_wd)?;
    Ok(LossTerms {
        total,
        cross_entropy: ce,
        penalty,
        weight_decay: wd,
        lambda1,
        lambda2,
        params: params.clone(),
        x,
    })
}

fn bind(params: &Params, x: &Tensor, g: &mut Graph) -> Result<(BoundParams, VarId)> {
    if x.shape().len() != 2 || x.cols() != params.spec().input() {
        return Err(Error::ShapeMismatch {
            op: "objective",
            lhs: x.shape().to_vec(),
            rhs: vec![params.spec().input()],
        });
    }
    let bound = params.bind(g);
    let xv = g.leaf(x.clone());
    Ok((bound, xv))
}

/// Cross-entropy + λ₁·(masked squared input gradient of Σₖ log ŷ) + λ₂·‖θ‖².
pub fn rrr_loss(
    params: &Params,
    x: &Tensor,
    y: &Tensor,
    mask: &AnnotationMask,
    lambda1: f64,
    lambda2: f64,
    g: &mut Graph,
) -> Result<LossTerms> {
    check_rows("rrr_loss", x.shape(), mask.shape())?;
    let (bound, xv) = bind(params, x, g)?;
    let cfg = PenaltyConfig {
        kind: PenaltyKind::Rrr,
        lambda1,
        lambda2,
        ..PenaltyConfig::default()
    };
    objective_bound(g, &bound, xv, y, Some(mask), Some(&cfg), lambda2, 0)
}

/// `H(y, ŷ) + λ‖∇ₓH(y, ŷ)‖₂²`.
pub fn doubleback_loss(params: &Params, x: &Tensor, y: &Tensor, lambda: f64, g: &mut Graph) -> Result<LossTerms> {
    let (bound, xv) = bind(params, x, g)?;
    let cfg = PenaltyConfig {
        kind: PenaltyKind::Doubleback,
        lambda1: lambda,
        lambda2: 0.0,
        ..PenaltyConfig::default()
    };
    objective_bound(g, &bound, xv, y, None, Some(&cfg), 0.0, 0)
}

fn weighted_penalty(params: &Params, x: &Tensor, y: &Tensor, cfg: PenaltyConfig, seed: u64, g: &mut Graph) -> Result<VarId> {
    cfg.validate()?;
    let (bound, xv) = bind(params, x, g)?;
    check_rows("penalty", &[x.rows(), params.spec().output()], y.shape())?;
    let p = raw_penalty(g, &bound, xv, y, None, &cfg, seed)?;
    g.scale(p, cfg.lambda1)
}

/// `λ‖∇ₓH(1/K, ŷ)‖₂²`; never reads labels.
pub fn certainty_penalty(params: &Params, x: &Tensor, lambda: f64, g: &mut Graph) -> Result<VarId> {
    let k = params.spec().output();
    let dummy = Tensor::full(&[x.rows(), k], 1.0 / k as f64);
    let cfg = PenaltyConfig {
        kind: PenaltyKind::Certainty,
        lambda1: lambda,
        ..PenaltyConfig::default()
    };
    weighted_penalty(params, x, &dummy, cfg, 0, g)
}

/// `λ‖∇ₓH(y, ŷ)‖₁`.
pub fn l1_grad_penalty(params: &Params, x: &Tensor, y: &Tensor, lambda: f64, g: &mut Graph) -> Result<VarId> {
    let cfg = PenaltyConfig {
        kind: PenaltyKind::L1Grad,
        lambda1: lambda,
        ..PenaltyConfig::default()
    };
    weighted_penalty(params, x, y, cfg, 0, g)
}

/// Monte-Carlo estimate `(1/σ²)·E‖∇ₓH(x) − ∇ₓH(x+ε)‖²`, ε ~ N(0, σ²), of the
/// cross-entropy's input-Hessian Frobenius norm.
pub fn hessian_norm_estimate(
    params: &Params,
    x: &Tensor,
    y: &Tensor,
    sigma: f64,
    n_noise: usize,
    seed: u64,
    g: &mut Graph,
) -> Result<VarId> {
    let cfg = PenaltyConfig {
        kind: PenaltyKind::HessianEst,
        lambda1: 1.0,
        sigma,
        n_noise,
        ..PenaltyConfig::default()
    };
    weighted_penalty(params, x, y, cfg, seed, g)
}

/// The estimator for an arbitrary scalar function `f` of the batch `x`.
/// Each noise draw is one `[1, D]` vector shared by every row of the batch.
pub fn hessian_norm_estimate_with<F>(g: &mut Graph, x: VarId, mut f: F, sigma: f64, n_noise: usize, seed: u64) -> Result<VarId>
where
    F: FnMut(&mut Graph, VarId) -> Result<VarId>,
{
    if !(sigma > 0.0) || n_noise == 0 {
        return Err(invalid("hessian estimator needs sigma > 0 and n_noise >= 1"));
    }
    let d = g.shape(x)[g.shape(x).len() - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma checked positive");
    let fx = f(g, x)?;
    let g0 = g.grad_recorded(fx, &[x])?[0];
    let mut acc: Option<VarId> = None;
    for _ in 0..n_noise {
        let eps: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        let eps = g.constant(Tensor::from_parts(vec![1, d], eps));
        let xe = g.add(x, eps)?;
        let fe = f(g, xe)?;
        let ge = g.grad_recorded(fe, &[xe])?[0];
        let diff = g.sub(g0, ge)?;
        let sq = squared_norm(g, diff)?;
        acc = Some(match acc {
            None => sq,
            Some(a) => g.add(a, sq)?,
        });
    }
    g.scale(acc.unwrap(), 1.0 / (sigma * sigma * n_noise as f64))
}

/// Teacher probabilities at temperature `t`, as a detached tensor.
pub fn distill_targets(params: &Params, x: &Tensor, t: f64) -> Result<Tensor> {
    check_temperature(t)?;
    let mut g = Graph::new();
    let lp = crate::nn::forward_with_temperature(params, x, t, &mut g)?;
    Ok(g.value(lp).map(f64::exp))
}

/// `Σₙ (aₙ·bₙ)² / (‖aₙ‖²‖bₙ‖² + ε)` over the rows of two `N × D` nodes.
pub fn cosine_sim_penalty(g: &mut Graph, a: VarId, b: VarId) -> Result<VarId> {
    check_rows("cosine_sim_penalty", g.shape(a), g.shape(b))?;
    if g.shape(a).len() != 2 {
        return Err(invalid("cosine penalty expects N×D operands"));
    }
    let ab = g.mul(a, b)?;
    let dot = g.sum_axis(ab, 1)?;
    let aa = g.square(a)?;
    let aa = g.sum_axis(aa, 1)?;
    let bb = g.square(b)?;
    let bb = g.sum_axis(bb, 1)?;
    let num = g.square(dot)?;
    let den = g.mul(aa, bb)?;
    let eps = g.constant(Tensor::scalar(COSINE_EPS));
    let den = g.add(den, eps)?;
    let per_row = g.div(num, den)?;
    g.sum(per_row)
}

/// Per-row squared cosine similarity of two plain gradient tensors.
pub fn squared_cosine_rows(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    check_rows("squared_cosine_rows", a.shape(), b.shape())?;
    Ok((0..a.rows())
        .map(|i| {
            let (u, v) = (a.row(i), b.row(i));
            let dot: f64 = u.iter().zip(v).map(|(p, q)| p * q).sum();
            let uu: f64 = u.iter().map(|p| p * p).sum();
            let vv: f64 = v.iter().map(|q| q * q).sum();
            dot * dot / (uu * vv + COSINE_EPS)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, LayerSpec};

    fn setup() -> (Params, Tensor, Tensor) {
        let p = init_params(&LayerSpec::new(vec![4, 5, 3]).unwrap(), 0);
        let x = Tensor::matrix(2, 4, vec![0.1, 0.7, 0.3, 0.9, 0.5, 0.2, 0.8, 0.4]).unwrap();
        let y = crate::data::one_hot(&[0, 2], 3).unwrap();
        (p, x, y)
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let lp = g.leaf(Tensor::matrix(1, 2, vec![0.0, -1000.0]).unwrap());
        let y = crate::data::one_hot(&[0], 2).unwrap();
        let ce = cross_entropy(&mut g, lp, &y).unwrap();
        assert_eq!(g.value(ce).item(), 0.0);

        let lp = g.leaf(Tensor::full(&[1, 10], (0.1f64).ln()));
        let y = crate::data::one_hot(&[7], 10).unwrap();
        let ce = cross_entropy(&mut g, lp, &y).unwrap();
        assert!((g.value(ce).item() - 10f64.ln()).abs() < 1e-12);

        let lp = g.leaf(Tensor::full(&[2, 2], (0.5f64).ln()));
        let y = crate::data::one_hot(&[0, 1], 2).unwrap();
        let ce = cross_entropy(&mut g, lp, &y).unwrap();
        assert!((g.value(ce).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&mut g, lp, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn rrr_degenerate_cases() {
        let (p, x, y) = setup();
        let zero = AnnotationMask::zeros(2, 4);
        let mut g = Graph::new();
        let t = rrr_loss(&p, &x, &y, &zero, 1000.0, 1e-4, &mut g).unwrap();
        let v = t.values(&g);
        assert_eq!(v.total, v.cross_entropy + 1e-4 * p.squared_norm());

        let ones = AnnotationMask::new(Tensor::ones(&[2, 4])).unwrap();
        let mut g = Graph::new();
        let t = rrr_loss(&p, &x, &y, &ones, 0.0, 0.0, &mut g).unwrap();
        let v = t.values(&g);
        assert_eq!(v.total.to_bits(), v.cross_entropy.to_bits());

        let mut g = Graph::new();
        assert!(rrr_loss(&p, &x, &y, &AnnotationMask::zeros(3, 4), 1.0, 0.0, &mut g).is_err());
    }

    #[test]
    fn mask_validation_and_algebra() {
        assert!(AnnotationMask::new(Tensor::matrix(1, 2, vec![0.5, 1.0]).unwrap()).is_err());
        let a = AnnotationMask::new(Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
        let b = AnnotationMask::new(Tensor::matrix(1, 3, vec![0.0, 0.0, 1.0]).unwrap()).unwrap();
        let u = a.union(&b).unwrap();
        assert!(a.is_subset_of(&u) && b.is_subset_of(&u));
        assert!(!u.is_subset_of(&a));
        assert_eq!(u.count(), 2);
    }

    #[test]
    fn cosine_examples() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 1.0, 0.0, 0.0, 0.0]).unwrap());
        let b = g.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 0.0, 3.0, 0.0, 0.0]).unwrap());
        let p = cosine_sim_penalty(&mut g, a, b).unwrap();
        // parallel row: 25 / (25 + 1e-6); orthogonal row: 0; zero row: 0
        let expected = 25.0 / (25.0 + 1e-6);
        assert!((g.value(p).item() - expected).abs() < 1e-15);
        let rows = squared_cosine_rows(g.value(a), g.value(b)).unwrap();
        assert!((rows[0] - expected).abs() < 1e-15);
        assert_eq!(rows[1], 0.0);
        assert_eq!(rows[2], 0.0);
    }

    #[test]
    fn distill_targets_normalize() {
        let (p, x, _) = setup();
        for t in [1.0, 50.0] {
            let q = distill_targets(&p, &x, t).unwrap();
            for i in 0..q.rows() {
                assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let q = distill_targets(&p, &x, 1e9).unwrap();
        assert!(q.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-6));
        let base = crate::nn::predict_log_probs(&p, &x).unwrap().map(f64::exp);
        assert_eq!(distill_targets(&p, &x, 1.0).unwrap(), base);
        assert!(distill_targets(&p, &x, 0.0).is_err());
    }

    #[test]
    fn certainty_is_zero_for_constant_model() {
        let (p, x, _) = setup();
        let zero = p.with_flat(&vec![0.0; p.num_params()]).unwrap();
        let mut g = Graph::new();
        let v = certainty_penalty(&zero, &x, 3.0, &mut g).unwrap();
        assert_eq!(g.value(v).item(), 0.0);
    }

    #[test]
    fn penalty_config_validation() {
        let mut cfg = PenaltyConfig {
            kind: PenaltyKind::HessianEst,
            sigma: 0.0,
            ..PenaltyConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.sigma = 0.1;
        assert!(cfg.validate().is_ok());
        cfg.lambda1 = -1.0;
        assert!(cfg.validate().is_err());
    }
}
