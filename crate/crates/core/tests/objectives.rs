use proptest::prelude::*;
use rrr_core::autodiff::Graph;
use rrr_core::data::one_hot;
use rrr_core::nn::{init_params, predict_log_probs, LayerSpec, Params};
use rrr_core::objectives::*;
use rrr_core::Tensor;

fn batch(n: usize, d: usize, seed: u64) -> Tensor {
    let data = (0..n * d)
        .map(|i| (((i as u64 + 1) * 2654435761 + seed * 97) % 1000) as f64 / 1000.0)
        .collect();
    Tensor::new(vec![n, d], data).unwrap()
}

fn linear_model(d: usize, k: usize, seed: u64) -> Params {
    init_params(&LayerSpec::new(vec![d, k]).unwrap(), seed)
}

#[test]
fn doubleback_linear_softmax_closed_form() {
    let (d, k, n, lambda) = (6, 3, 5, 0.7);
    let p = linear_model(d, k, 4);
    let x = batch(n, d, 1);
    let y = one_hot(&[0, 1, 2, 1, 0], k).unwrap();
    let mut g = Graph::new();
    let terms = doubleback_loss(&p, &x, &y, lambda, &mut g).unwrap();
    let v = terms.values(&g);

    let probs = predict_log_probs(&p, &x).unwrap().map(f64::exp);
    let w = &p.layers()[0].weight;
    let mut expected = 0.0;
    for i in 0..n {
        for a in 0..d {
            let s: f64 = (0..k).map(|c| w.data()[a * k + c] * (probs.row(i)[c] - y.row(i)[c])).sum();
            expected += s * s;
        }
    }
    assert!((v.penalty - expected).abs() < 1e-12 * expected.max(1.0));
    assert!((v.total - (v.cross_entropy + lambda * expected)).abs() < 1e-12);

    let mut g = Graph::new();
    let zero = doubleback_loss(&p, &x, &y, 0.0, &mut g).unwrap().values(&g);
    assert_eq!(zero.total, zero.cross_entropy);
}

#[test]
fn certainty_relates_to_sum_log_prob_gradient() {
    let (k, lambda) = (3, 2.0);
    let p = init_params(&LayerSpec::new(vec![4, 5, k]).unwrap(), 7);
    let x = batch(4, 4, 3);
    let mut g = Graph::new();
    let pen = certainty_penalty(&p, &x, lambda, &mut g).unwrap();
    let pen = g.value(pen).item();

    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let xv = g.leaf(x.clone());
    let gx = input_gradient(&mut g, &bound, xv, GradientKind::SumLogProbs, None).unwrap();
    let norm: f64 = g.value(gx).data().iter().map(|v| v * v).sum();
    let expected = lambda / (k * k) as f64 * norm;
    assert!((pen - expected).abs() < 1e-12 * expected.max(1.0), "{pen} vs {expected}");
}

#[test]
fn l1_penalty_of_known_gradient() {
    let mut g = Graph::new();
    let v = g.leaf(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.0]).unwrap());
    let a = g.abs(v).unwrap();
    let s = g.sum(a).unwrap();
    let p = g.scale(s, 0.5).unwrap();
    assert_eq!(g.value(p).item(), 1.5);

    let p = linear_model(3, 2, 0);
    let zero = p.with_flat(&vec![0.0; p.num_params()]).unwrap();
    let mut g = Graph::new();
    let y = one_hot(&[0, 1], 2).unwrap();
    let v = l1_grad_penalty(&zero, &batch(2, 3, 0), &y, 4.0, &mut g).unwrap();
    assert_eq!(g.value(v).item(), 0.0);
}

#[test]
fn hessian_estimator_on_known_functions() {
    let d = 8;
    let x0 = batch(1, d, 5);

    let mut g = Graph::new();
    let x = g.leaf(x0.clone());
    let quad = |g: &mut Graph, v| {
        let s = g.square(v)?;
        g.sum(s)
    };
    let est = hessian_norm_estimate_with(&mut g, x, quad, 1e-3, 64, 9).unwrap();
    let ratio = g.value(est).item() / (4.0 * d as f64);
    assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");

    let mut g = Graph::new();
    let x = g.leaf(x0.clone());
    let est = hessian_norm_estimate_with(&mut g, x, |g, v| g.sum(v), 1e-3, 16, 9).unwrap();
    assert!(g.value(est).item() < 1e-12);

    let p = init_params(&LayerSpec::new(vec![8, 5, 3]).unwrap(), 1);
    let xb = batch(4, 8, 2);
    let y = one_hot(&[0, 1, 2, 0], 3).unwrap();
    let a = {
        let mut g = Graph::new();
        let v = hessian_norm_estimate(&p, &xb, &y, 1e-2, 3, 11, &mut g).unwrap();
        g.value(v).item()
    };
    let b = {
        let mut g = Graph::new();
        let v = hessian_norm_estimate(&p, &xb, &y, 1e-2, 3, 11, &mut g).unwrap();
        g.value(v).item()
    };
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(a > 0.0);
    let mut g = Graph::new();
    assert!(hessian_norm_estimate(&p, &xb, &y, 0.0, 3, 11, &mut g).is_err());
}

#[test]
fn certainty_never_reads_labels() {
    let p = init_params(&LayerSpec::new(vec![4, 5, 3]).unwrap(), 2);
    let x = batch(4, 4, 8);
    let run = |labels: &[usize]| {
        let y = one_hot(labels, 3).unwrap();
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let xv = g.leaf(x.clone());
        let cfg = PenaltyConfig { kind: PenaltyKind::Certainty, lambda1: 1.0, ..Default::default() };
        let v = raw_penalty(&mut g, &bound, xv, &y, None, &cfg, 0).unwrap();
        g.value(v).item()
    };
    assert_eq!(run(&[0, 1, 2, 0]).to_bits(), run(&[2, 2, 1, 1]).to_bits());
}

fn rrr_value(p: &Params, x: &Tensor, y: &Tensor, mask: &AnnotationMask, l1: f64) -> f64 {
    let mut g = Graph::new();
    let t = rrr_loss(p, x, y, mask, l1, 1e-4, &mut g).unwrap();
    g.value(t.total).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rrr_monotone_in_lambda(seed in 0u64..1000, l1 in 0.0f64..100.0, extra in 0.0f64..100.0) {
        let p = init_params(&LayerSpec::new(vec![4, 5, 3]).unwrap(), seed);
        let x = batch(4, 4, seed);
        let y = one_hot(&[0, 1, 2, 1], 3).unwrap();
        let mask = AnnotationMask::new(Tensor::ones(&[4, 4])).unwrap();
        prop_assert!(rrr_value(&p, &x, &y, &mask, l1 + extra) >= rrr_value(&p, &x, &y, &mask, l1));
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant(
        a in prop::collection::vec(-3.0f64..3.0, 6),
        b in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let ta = Tensor::matrix(2, 3, a).unwrap();
        let tb = Tensor::matrix(2, 3, b).unwrap();
        let pen = |u: &Tensor, v: &Tensor| {
            let mut g = Graph::new();
            let (x, y) = (g.leaf(u.clone()), g.leaf(v.clone()));
            let p = cosine_sim_penalty(&mut g, x, y).unwrap();
            g.value(p).item()
        };
        let ab = pen(&ta, &tb);
        prop_assert_eq!(ab, pen(&tb, &ta));
        prop_assert!((ab - pen(&ta.map(|v| 10.0 * v), &tb)).abs() < 1e-6);
        for r in squared_cosine_rows(&ta, &tb).unwrap() {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
