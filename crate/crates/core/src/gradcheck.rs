//! Automatic-versus-numerical gradient comparisons for every objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{finite_difference, Graph, VarId};
use crate::data::one_hot;
use crate::error::Result;
use crate::nn::{init_params, BoundParams, LayerSpec, Params};
use crate::objectives::{self, AnnotationMask, GradientKind, PenaltyConfig, PenaltyKind};
use crate::tensor::Tensor;

pub const FIRST_ORDER_TOL: f64 = 1e-5;
pub const PENALTY_TOL: f64 = 1e-3;
pub const STEP: f64 = 1e-5;
pub const SIZES: [usize; 3] = [4, 5, 3];
pub const BATCH: usize = 4;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

struct Fixture {
    params: Params,
    other: Params,
    x: Tensor,
    y: Tensor,
    mask: AnnotationMask,
}

fn fixture(seed: u64) -> Result<Fixture> {
    let spec = LayerSpec::new(SIZES.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let x: Vec<f64> = (0..BATCH * SIZES[0]).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..SIZES[2])).collect();
    let mask: Vec<f64> = (0..BATCH * SIZES[0]).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect();
    Ok(Fixture {
        params: init_params(&spec, seed),
        other: init_params(&spec, seed + 100),
        x: Tensor::new(vec![BATCH, SIZES[0]], x)?,
        y: one_hot(&labels, SIZES[2])?,
        mask: AnnotationMask::new(Tensor::new(vec![BATCH, SIZES[0]], mask)?)?,
    })
}

type Build<'a> = dyn Fn(&mut Graph, &BoundParams, VarId) -> Result<VarId> + 'a;

/// Compares the θ-gradient of `build` against central differences.
fn check_theta(name: &str, seed: u64, tol: f64, params: &Params, x: &Tensor, build: &Build) -> Result<GradCheck> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xv = g.leaf(x.clone());
    let out = build(&mut g, &bound, xv)?;
    let ad: Vec<f64> = g.grad(out, &bound.vars())?.into_iter().flat_map(Tensor::into_data).collect();

    let flat = Tensor::vector(params.flatten())?;
    let fd = finite_difference(
        |theta| {
            let p = params.with_flat(theta.data())?;
            let mut g = Graph::new();
            let bound = p.bind(&mut g);
            let xv = g.leaf(x.clone());
            let out = build(&mut g, &bound, xv)?;
            Ok(g.value(out).clone())
        },
        &flat,
        STEP,
    )?;
    Ok(GradCheck {
        name: name.to_string(),
        seed,
        rel_error: relative_error(&ad, fd.data()),
        tolerance: tol,
    })
}

fn check_input(name: &str, seed: u64, f: &Fixture) -> Result<GradCheck> {
    let mut g = Graph::new();
    let bound = f.params.bind(&mut g);
    let xv = g.leaf(f.x.clone());
    let lp = bound.log_probs(&mut g, xv)?;
    let ce = objectives::cross_entropy(&mut g, lp, &f.y)?;
    let ad = g.grad(ce, &[xv])?.remove(0);
    let fd = finite_difference(
        |x| {
            let mut g = Graph::new();
            let lp = crate::nn::forward(&f.params, x, &mut g)?;
            let ce = objectives::cross_entropy(&mut g, lp, &f.y)?;
            Ok(g.value(ce).clone())
        },
        &f.x,
        STEP,
    )?;
    Ok(GradCheck {
        name: name.to_string(),
        seed,
        rel_error: relative_error(ad.data(), fd.data()),
        tolerance: FIRST_ORDER_TOL,
    })
}

fn penalty(kind: PenaltyKind) -> PenaltyConfig {
    PenaltyConfig {
        kind,
        lambda1: 1.0,
        lambda2: 0.0,
        sigma: 1e-2,
        n_noise: 2,
    }
}

/// Moves `x` until no input-gradient coordinate of the loss sits near the
/// L1 kink at zero.
fn away_from_kinks(f: &Fixture, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = f.x.clone();
    for _ in 0..100 {
        let mut g = Graph::new();
        let bound = f.params.bind(&mut g);
        let xv = g.leaf(x.clone());
        let gx = objectives::input_gradient(&mut g, &bound, xv, GradientKind::TrueLabelCe, Some(&f.y))?;
        if g.value(gx).data().iter().all(|v| v.abs() > 1e-6) {
            return Ok(x);
        }
        for v in x.data_mut() {
            *v = (*v + 0.01 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0);
        }
    }
    Ok(x)
}

/// Every gradient comparison for one seed.
pub fn check_all(seed: u64) -> Result<Vec<GradCheck>> {
    let f = fixture(seed)?;
    let mut out = Vec::new();

    out.push(check_theta("cross_entropy/theta", seed, FIRST_ORDER_TOL, &f.params, &f.x, &|g, b, x| {
        let lp = b.log_probs(g, x)?;
        objectives::cross_entropy(g, lp, &f.y)
    })?);
    out.push(check_input("cross_entropy/input", seed, &f)?);
    out.push(check_theta("weight_decay/theta", seed, FIRST_ORDER_TOL, &f.params, &f.x, &|g, b, _| {
        b.squared_norm(g)
    })?);
    out.push(check_theta("distill_ce/theta", seed, FIRST_ORDER_TOL, &f.params, &f.x, &|g, b, x| {
        let q = objectives::distill_targets(&f.other, &f.x, 50.0)?;
        let lp = b.log_probs_at(g, x, 50.0)?;
        objectives::cross_entropy(g, lp, &q)
    })?);
    out.push(check_theta("rrr_total/theta", seed, PENALTY_TOL, &f.params, &f.x, &|g, b, x| {
        let cfg = PenaltyConfig { lambda1: 10.0, lambda2: 1e-2, ..penalty(PenaltyKind::Rrr) };
        Ok(objectives::objective_bound(g, b, x, &f.y, Some(&f.mask), Some(&cfg), 1e-2, 0)?.total)
    })?);

    let l1_x = away_from_kinks(&f, seed)?;
    for kind in PenaltyKind::ALL {
        let cfg = penalty(kind);
        let x = if kind == PenaltyKind::L1Grad { &l1_x } else { &f.x };
        let name = format!("{}/theta", kind.name());
        out.push(check_theta(&name, seed, PENALTY_TOL, &f.params, x, &|g, b, xv| {
            objectives::raw_penalty(g, b, xv, &f.y, Some(&f.mask), &cfg, seed)
        })?);
    }

    out.push(check_theta("cosine_sim/theta", seed, PENALTY_TOL, &f.params, &f.x, &|g, b, x| {
        let other = f.other.bind(g);
        let ga = objectives::input_gradient(g, b, x, GradientKind::SumLogProbs, None)?;
        let gb = objectives::input_gradient(g, &other, x, GradientKind::SumLogProbs, None)?;
        objectives::cosine_sim_penalty(g, ga, gb)
    })?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
