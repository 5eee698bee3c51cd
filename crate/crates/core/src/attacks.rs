//! Gradient-sign attacks and the Jacobian saliency map attack.
//!
//! All outputs are clipped to the spec's range after every step. The
//! per-step perturbation never exceeds ε in any coordinate, including after
//! floating-point rounding of `x ± ε`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sign, Graph};
use crate::error::{invalid, Error, Result};
use crate::nn::Params;
use crate::objectives::cross_entropy;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Tgsm,
    Jsma,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    #[default]
    None,
    /// `(y + 1) mod K`.
    PlusOne,
    Explicit(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub iterations: usize,
    #[serde(default)]
    pub target: TargetRule,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "unit_range")]
    pub clip: (f64, f64),
}

fn one() -> usize {
    1
}

fn default_gamma() -> f64 {
    0.25
}

fn unit_range() -> (f64, f64) {
    (0.0, 1.0)
}

impl AttackSpec {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            iterations: 1,
            target: TargetRule::None,
            gamma: default_gamma(),
            clip: unit_range(),
        }
    }

    pub fn tgsm(epsilon: f64, iterations: usize, target: TargetRule) -> Self {
        Self {
            kind: AttackKind::Tgsm,
            epsilon,
            iterations,
            target,
            ..Self::fgsm(epsilon)
        }
    }

    pub fn jsma(gamma: f64, target: TargetRule) -> Self {
        Self {
            kind: AttackKind::Jsma,
            gamma,
            target,
            ..Self::fgsm(0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("attack epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(invalid("attack iterations must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!("jsma gamma must lie in [0, 1], got {}", self.gamma)));
        }
        let (lo, hi) = self.clip;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(invalid(format!("invalid clip range ({lo}, {hi})")));
        }
        if self.kind != AttackKind::Fgsm && self.target == TargetRule::None {
            return Err(invalid("targeted attacks need a target rule"));
        }
        Ok(())
    }

    /// Target class per example, or `None` for untargeted attacks.
    pub fn targets(&self, labels: &[usize], k: usize) -> Result<Option<Vec<usize>>> {
        match &self.target {
            TargetRule::None => Ok(None),
            TargetRule::PlusOne => Ok(Some(plus_one_targets(labels, k))),
            TargetRule::Explicit(t) => {
                if t.len() != labels.len() || t.iter().any(|&c| c >= k) {
                    return Err(invalid(format!(
                        "explicit targets must list {} classes below {k}",
                        labels.len()
                    )));
                }
                Ok(Some(t.clone()))
            }
        }
    }
}

pub fn plus_one_targets(labels: &[usize], k: usize) -> Vec<usize> {
    labels.iter().map(|&l| (l + 1) % k).collect()
}

/// `∇ₓ H(y, ŷ)` for every row.
pub fn loss_input_gradient(params: &Params, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || y.shape() != [x.rows(), params.spec().output()] {
        return Err(Error::ShapeMismatch {
            op: "loss_input_gradient",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xv = g.leaf(x.clone());
    let lp = bound.log_probs(&mut g, xv)?;
    let h = cross_entropy(&mut g, lp, y)?;
    Ok(g.grad(h, &[xv])?.remove(0))
}

/// Moves `x` by `direction · ε` per coordinate and clips, guaranteeing
/// `|x' − x| ≤ ε` exactly.
fn signed_step(x: &Tensor, direction: &Tensor, eps: f64, (lo, hi): (f64, f64)) -> Tensor {
    let mut out = x.clone();
    for (v, &d) in out.data_mut().iter_mut().zip(direction.data()) {
        let orig = *v;
        let s = sign(d);
        if s == 0.0 || eps == 0.0 {
            continue;
        }
        let mut moved = orig + s * eps;
        while (moved - orig).abs() > eps {
            moved = if s > 0.0 { moved.next_down() } else { moved.next_up() };
        }
        *v = moved.clamp(lo, hi);
    }
    out
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("attack epsilon must be finite and >= 0, got {eps}")))
    }
}

/// `clip(X + ε·sign(∇ₓH(y, ŷ)))` on `[0, 1]`.
pub fn fgsm(params: &Params, x: &Tensor, y: &Tensor, eps: f64) -> Result<Tensor> {
    fgsm_clipped(params, x, y, eps, unit_range())
}

pub fn fgsm_clipped(params: &Params, x: &Tensor, y: &Tensor, eps: f64, clip: (f64, f64)) -> Result<Tensor> {
    check_eps(eps)?;
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let grad = loss_input_gradient(params, x, y)?;
    Ok(signed_step(x, &grad, eps, clip))
}

/// `clip(X − ε·sign(∇ₓH(y_target, ŷ)))` on `[0, 1]`.
pub fn tgsm(params: &Params, x: &Tensor, y_target: &Tensor, eps: f64) -> Result<Tensor> {
    tgsm_clipped(params, x, y_target, eps, unit_range())
}

pub fn tgsm_clipped(params: &Params, x: &Tensor, y_target: &Tensor, eps: f64, clip: (f64, f64)) -> Result<Tensor> {
    check_eps(eps)?;
    if eps == 0.0 {
        if y_target.shape() != [x.rows(), params.spec().output()] {
            return Err(Error::ShapeMismatch {
                op: "tgsm",
                lhs: x.shape().to_vec(),
                rhs: y_target.shape().to_vec(),
            });
        }
        return Ok(x.clone());
    }
    let grad = loss_input_gradient(params, x, y_target)?.map(|v| -v);
    Ok(signed_step(x, &grad, eps, clip))
}

/// Applies the gradient-sign attack of `spec` for `spec.iterations` steps,
/// recomputing the gradient at every iterate. `y` holds the true labels.
pub fn iterate(params: &Params, x: &Tensor, y: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    iterate_with(params, x, y, spec, |_, _| {})
}

/// [`iterate`] with a callback after every step (step index from 1, iterate).
pub fn iterate_with<F>(params: &Params, x: &Tensor, y: &Tensor, spec: &AttackSpec, mut on_step: F) -> Result<Tensor>
where
    F: FnMut(usize, &Tensor),
{
    spec.validate()?;
    let k = params.spec().output();
    let targets = match spec.kind {
        AttackKind::Fgsm => None,
        AttackKind::Tgsm => {
            let t = spec.targets(&y.argmax_rows(), k)?.expect("validated");
            Some(crate::data::one_hot(&t, k)?)
        }
        AttackKind::Jsma => return Err(invalid("jsma is not a gradient-sign attack; use jsma_batch")),
    };
    let mut cur = x.clone();
    for step in 1..=spec.iterations {
        cur = match &targets {
            None => fgsm_clipped(params, &cur, y, spec.epsilon, spec.clip)?,
            Some(t) => tgsm_clipped(params, &cur, t, spec.epsilon, spec.clip)?,
        };
        on_step(step, &cur);
    }
    Ok(cur)
}

#[derive(Clone, Debug, PartialEq)]
pub struct JsmaOutcome {
    pub x: Tensor,
    pub success: bool,
    pub pixels_changed: usize,
}

/// Logit Jacobian rows needed by the saliency map: `∂Z_t/∂x` and
/// `Σ_{j≠t} ∂Z_j/∂x`.
fn saliency_terms(params: &Params, x: &Tensor, target: usize) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xv = g.leaf(x.clone());
    let z = bound.logits(&mut g, xv)?;
    let logits = g.value(z).clone();
    let k = logits.cols();
    let mut sel = Tensor::zeros(&[1, k]);
    sel.data_mut()[target] = 1.0;
    let sel = g.constant(sel);
    let zt = g.mul(z, sel)?;
    let zt = g.sum(zt)?;
    let all = g.sum(z)?;
    let others = g.sub(all, zt)?;
    let alpha = g.grad(zt, &[xv])?.remove(0).into_data();
    let beta = g.grad(others, &[xv])?.remove(0).into_data();
    Ok((alpha, beta, crate::tensor::argmax(logits.data())))
}

/// Best pair `(p, q)`, `p < q`, of the search domain with `α > 0`, `β < 0`
/// maximizing `α·|β|`.
fn best_pair(alpha: &[f64], beta: &[f64], domain: &[usize]) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, &p) in domain.iter().enumerate() {
        for &q in &domain[i + 1..] {
            let a = alpha[p] + alpha[q];
            let b = beta[p] + beta[q];
            if a > 0.0 && b < 0.0 {
                let score = -a * b;
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, p, q));
                }
            }
        }
    }
    best.map(|(_, p, q)| (p, q))
}

/// Increasing-feature pairwise JSMA on a single example `1 × D`.
pub fn jsma(params: &Params, x: &Tensor, target: usize, gamma: f64) -> Result<JsmaOutcome> {
    jsma_clipped(params, x, target, gamma, unit_range())
}

pub fn jsma_clipped(params: &Params, x: &Tensor, target: usize, gamma: f64, (lo, hi): (f64, f64)) -> Result<JsmaOutcome> {
    if x.shape().len() != 2 || x.rows() != 1 {
        return Err(invalid(format!("jsma attacks one 1×D example, got {:?}", x.shape())));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid(format!("jsma gamma must lie in [0, 1], got {gamma}")));
    }
    if target >= params.spec().output() {
        return Err(invalid(format!("jsma target {target} out of range")));
    }
    let d = x.cols();
    let budget = (gamma * d as f64).floor() as usize;
    let mut cur = x.clone();
    let mut domain: Vec<usize> = (0..d).filter(|&p| x.data()[p] < hi).collect();
    let mut changed = 0;
    loop {
        let (alpha, beta, pred) = saliency_terms(params, &cur, target)?;
        if pred == target {
            return Ok(JsmaOutcome {
                x: cur,
                success: true,
                pixels_changed: changed,
            });
        }
        if changed + 2 > budget {
            break;
        }
        let Some((p, q)) = best_pair(&alpha, &beta, &domain) else {
            break;
        };
        for i in [p, q] {
            cur.data_mut()[i] = hi.max(lo);
        }
        changed += 2;
        domain.retain(|&i| i != p && i != q);
    }
    Ok(JsmaOutcome {
        x: cur,
        success: false,
        pixels_changed: changed,
    })
}

/// Runs any attack spec over a batch. JSMA rows are attacked independently.
pub fn run_attack(params: &Params, x: &Tensor, y: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    spec.validate()?;
    if spec.kind != AttackKind::Jsma {
        return iterate(params, x, y, spec);
    }
    let k = params.spec().output();
    let targets = spec.targets(&y.argmax_rows(), k)?.expect("validated");
    let mut out = x.clone();
    for (i, &t) in targets.iter().enumerate() {
        let row = x.select_rows(&[i]);
        let r = jsma_clipped(params, &row, t, spec.gamma, spec.clip)?;
        out.row_mut(i).copy_from_slice(r.x.data());
    }
    Ok(out)
}
