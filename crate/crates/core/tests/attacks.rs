use proptest::prelude::*;
use rrr_core::attacks::*;
use rrr_core::autodiff::Graph;
use rrr_core::data::one_hot;
use rrr_core::nn::{init_params, predict, predict_logits, LayerSpec, Params};
use rrr_core::objectives::cross_entropy;
use rrr_core::Tensor;

fn model(sizes: &[usize], seed: u64) -> Params {
    init_params(&LayerSpec::new(sizes.to_vec()).unwrap(), seed)
}

fn inputs(n: usize, d: usize, seed: u64) -> Tensor {
    let data = (0..n * d)
        .map(|i| (((i as u64 + 3) * 2246822519 + seed * 131) % 997) as f64 / 996.0)
        .collect();
    Tensor::new(vec![n, d], data).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn loss(p: &Params, x: &Tensor, y: &Tensor) -> f64 {
    let mut g = Graph::new();
    let lp = rrr_core::nn::forward(p, x, &mut g).unwrap();
    let h = cross_entropy(&mut g, lp, y).unwrap();
    g.value(h).item()
}

#[test]
fn zero_epsilon_is_identity() {
    let p = model(&[6, 5, 3], 0);
    let x = inputs(4, 6, 0);
    let y = one_hot(&[0, 1, 2, 0], 3).unwrap();
    assert_eq!(fgsm(&p, &x, &y, 0.0).unwrap(), x);
    assert_eq!(tgsm(&p, &x, &y, 0.0).unwrap(), x);
    assert!(fgsm(&p, &x, &y, -1.0).is_err());
    assert!(tgsm(&p, &x, &one_hot(&[0], 3).unwrap(), 0.1).is_err());
}

#[test]
fn tgsm_on_true_labels_mirrors_fgsm() {
    let p = model(&[6, 5, 3], 1);
    let x = Tensor::full(&[3, 6], 0.5);
    let y = one_hot(&[0, 1, 2], 3).unwrap();
    let f = fgsm(&p, &x, &y, 0.05).unwrap();
    let t = tgsm(&p, &x, &y, 0.05).unwrap();
    for ((a, b), o) in f.data().iter().zip(t.data()).zip(x.data()) {
        let (da, db) = (a - o, b - o);
        assert!((da == 0.0 && db == 0.0) || da.signum() == -db.signum());
        assert!((da + db).abs() < 1e-15);
    }
}

#[test]
fn iterate_single_step_equals_attack() {
    let p = model(&[6, 5, 3], 2);
    let x = inputs(5, 6, 2);
    let y = one_hot(&[0, 1, 2, 0, 1], 3).unwrap();
    let spec = AttackSpec::fgsm(0.1);
    assert_eq!(iterate(&p, &x, &y, &spec).unwrap(), fgsm(&p, &x, &y, 0.1).unwrap());

    let spec = AttackSpec::tgsm(0.1, 1, TargetRule::PlusOne);
    let t = one_hot(&plus_one_targets(&y.argmax_rows(), 3), 3).unwrap();
    assert_eq!(iterate(&p, &x, &y, &spec).unwrap(), tgsm(&p, &x, &t, 0.1).unwrap());
}

#[test]
fn iterated_norm_bound_every_step() {
    let p = model(&[6, 8, 10], 3);
    let x = inputs(6, 6, 3);
    let y = one_hot(&[9, 0, 1, 2, 3, 4], 10).unwrap();
    let spec = AttackSpec::tgsm(0.1, 15, TargetRule::PlusOne);
    let mut prev = None;
    iterate_with(&p, &x, &y, &spec, |k, cur| {
        let norm = max_abs_diff(cur, &x);
        assert!(norm <= k as f64 * 0.1 + 1e-12, "step {k}: {norm}");
        if let Some(prev) = &prev {
            assert!(max_abs_diff(cur, prev) <= 0.1);
        }
        assert!(cur.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prev = Some(cur.clone());
    })
    .unwrap();
}

#[test]
fn fgsm_does_not_decrease_loss_of_linear_model() {
    for seed in 0..5 {
        let p = model(&[6, 4], seed);
        let x = inputs(8, 6, seed).map(|v| 0.1 + 0.8 * v);
        let y = one_hot(&[0, 1, 2, 3, 0, 1, 2, 3], 4).unwrap();
        let base = loss(&p, &x, &y);
        for eps in [1e-5, 1e-4, 1e-3] {
            let adv = fgsm(&p, &x, &y, eps).unwrap();
            assert!(loss(&p, &adv, &y) >= base, "seed {seed} eps {eps}");
        }
    }
}

#[test]
fn jsma_zero_budget() {
    let p = model(&[6, 3], 4);
    let x = inputs(1, 6, 4);
    let pred = predict(&p, &x).unwrap()[0];
    let other = (pred + 1) % 3;
    let r = jsma(&p, &x, other, 0.0).unwrap();
    assert_eq!(r.x, x);
    assert!(!r.success);
    assert_eq!(r.pixels_changed, 0);
    let r = jsma(&p, &x, pred, 0.0).unwrap();
    assert!(r.success);
}

/// Exhaustive search over every pixel pair of a linear model, where the
/// logit Jacobian is the weight matrix itself.
fn oracle_pair(p: &Params, x: &Tensor, target: usize) -> Option<(usize, usize)> {
    let w = &p.layers()[0].weight;
    let (d, k) = (w.rows(), w.cols());
    let alpha = |i: usize| w.data()[i * k + target];
    let beta = |i: usize| (0..k).filter(|&j| j != target).map(|j| w.data()[i * k + j]).sum::<f64>();
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for a in 0..d {
        for b in a + 1..d {
            if x.data()[a] >= 1.0 || x.data()[b] >= 1.0 {
                continue;
            }
            let (al, be) = (alpha(a) + alpha(b), beta(a) + beta(b));
            if al > 0.0 && be < 0.0 && -al * be > best_score {
                best_score = -al * be;
                best = Some((a, b));
            }
        }
    }
    best
}

#[test]
fn jsma_first_pair_matches_exhaustive_search() {
    let mut checked = 0;
    for seed in 0..20 {
        let p = model(&[6, 3], seed);
        let x = inputs(1, 6, seed).map(|v| 0.8 * v);
        let pred = predict(&p, &x).unwrap()[0];
        for target in (0..3).filter(|&t| t != pred) {
            let Some((a, b)) = oracle_pair(&p, &x, target) else { continue };
            let r = jsma(&p, &x, target, 2.0 / 6.0).unwrap();
            let changed: Vec<usize> = (0..6).filter(|&i| r.x.data()[i] != x.data()[i]).collect();
            assert_eq!(changed, vec![a, b], "seed {seed} target {target}");
            assert!(changed.iter().all(|&i| r.x.data()[i] == 1.0));
            checked += 1;
        }
    }
    assert!(checked >= 10);
}

#[test]
fn run_attack_dispatches_jsma_rows() {
    let p = model(&[6, 5, 3], 5);
    let x = inputs(3, 6, 5);
    let y = one_hot(&[0, 1, 2], 3).unwrap();
    let spec = AttackSpec::jsma(0.5, TargetRule::PlusOne);
    let out = run_attack(&p, &x, &y, &spec).unwrap();
    for i in 0..3 {
        let single = jsma(&p, &x.select_rows(&[i]), (i + 1) % 3, 0.5).unwrap();
        assert_eq!(out.row(i), single.x.data());
    }
    let _ = predict_logits(&p, &out).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_sign_contracts(seed in 0u64..500, eps in 0.0f64..0.6, targeted in any::<bool>()) {
        let p = model(&[5, 6, 4], seed);
        let x = inputs(4, 5, seed);
        let y = one_hot(&[0, 1, 2, 3], 4).unwrap();
        let out = if targeted {
            let t = one_hot(&plus_one_targets(&[0, 1, 2, 3], 4), 4).unwrap();
            tgsm(&p, &x, &t, eps).unwrap()
        } else {
            fgsm(&p, &x, &y, eps).unwrap()
        };
        for (a, b) in out.data().iter().zip(x.data()) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - b).abs() <= eps);
        }
    }

    #[test]
    fn jsma_budget_and_diff_count(seed in 0u64..200, gamma in 0.0f64..=1.0) {
        let p = model(&[8, 6, 4], seed);
        let x = inputs(1, 8, seed);
        let pred = predict(&p, &x).unwrap()[0];
        let r = jsma(&p, &x, (pred + 1) % 4, gamma).unwrap();
        let diff = r.x.data().iter().zip(x.data()).filter(|(a, b)| a != b).count();
        prop_assert_eq!(diff, r.pixels_changed);
        prop_assert!(r.pixels_changed as f64 <= gamma * 8.0);
        prop_assert!(r.pixels_changed <= (gamma * 8.0).ceil() as usize);
        prop_assert!(r.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        if r.success {
            prop_assert_eq!(predict(&p, &r.x).unwrap()[0], (pred + 1) % 4);
        }
    }
}
