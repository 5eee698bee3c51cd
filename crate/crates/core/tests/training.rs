use proptest::prelude::*;
use rrr_core::data::{gen_toy_color, Dataset};
use rrr_core::explain::{fae_sequential, fae_simultaneous, AnnotationRule, FaeConfig, FaeStop, MaskCutoff};
use rrr_core::train::{balance_lambda, initial_terms, train, Batcher};
use rrr_core::{Annotation, AnnotationMask, Defense, Error, LayerSpec, PenaltyKind, Tensor, TrainConfig};

fn data() -> Dataset {
    gen_toy_color(300, 11).unwrap()
}

fn cfg() -> TrainConfig {
    let mut c = TrainConfig::new(LayerSpec::new(vec![75, 10, 2]).unwrap());
    c.steps = 30;
    c.batch_size = 64;
    c.seed = 4;
    c
}

fn digest(ds: &Dataset, c: &TrainConfig) -> String {
    train(ds, c).unwrap().0.digest()
}

#[test]
fn zero_lambda_and_empty_annotation_reduce_to_plain_training() {
    let ds = data();
    let plain = digest(&ds, &cfg());

    let mut c = cfg();
    c.defense = Defense::GradReg;
    c.penalty.lambda1 = 0.0;
    c.annotation = Annotation::Rule {
        rule: AnnotationRule::Corners,
        fraction: 0.3,
    };
    assert_eq!(digest(&ds, &c), plain);

    c.penalty.lambda1 = 1000.0;
    c.annotation = Annotation::Explicit(AnnotationMask::zeros(ds.len(), ds.num_features()));
    assert_eq!(digest(&ds, &c), plain);

    c.annotation = Annotation::Rule {
        rule: AnnotationRule::Corners,
        fraction: 0.3,
    };
    assert_ne!(digest(&ds, &c), plain);
}

#[test]
fn zero_epsilon_adversarial_training_is_plain_training() {
    let ds = data();
    let mut c = cfg();
    c.defense = Defense::AdvTrain;
    c.adv_epsilon = 0.0;
    assert_eq!(digest(&ds, &c), digest(&ds, &cfg()));
}

#[test]
fn every_defense_is_deterministic() {
    let ds = data();
    for defense in [Defense::None, Defense::GradReg, Defense::AdvTrain, Defense::Distill] {
        for kind in PenaltyKind::ALL {
            let mut c = cfg();
            c.defense = defense;
            c.penalty.kind = kind;
            c.penalty.lambda1 = 1.0;
            c.annotation = Annotation::Rule {
                rule: AnnotationRule::Corners,
                fraction: 0.5,
            };
            let (p1, l1) = train(&ds, &c).unwrap();
            let (p2, l2) = train(&ds, &c).unwrap();
            assert_eq!(p1, p2, "{defense:?} {kind:?}");
            assert_eq!(l1, l2);
            if defense != Defense::GradReg {
                break;
            }
        }
    }
    let mut other = cfg();
    other.seed += 1;
    assert_ne!(digest(&ds, &other), digest(&ds, &cfg()));
}

#[test]
fn init_seed_only_moves_the_start() {
    let ds = data();
    let mut c = cfg();
    c.init_seed = Some(c.seed);
    assert_eq!(digest(&ds, &c), digest(&ds, &cfg()));
    c.init_seed = Some(99);
    assert_ne!(digest(&ds, &c), digest(&ds, &cfg()));
}

#[test]
fn over_regularized_training_diverges_cleanly() {
    let ds = data();
    let mut c = cfg();
    c.defense = Defense::GradReg;
    c.penalty.lambda1 = 1e15;
    c.annotation = Annotation::Rule {
        rule: AnnotationRule::Corners,
        fraction: 1.0,
    };
    match train(&ds, &c) {
        Err(Error::Diverged { step, value }) => {
            assert_eq!(step, 0);
            assert!(value > c.divergence_limit);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    c.divergence_limit = f64::INFINITY;
    assert!(train(&ds, &c).is_ok());
}

#[test]
fn balance_picks_the_log_nearest_ratio() {
    let ds = data();
    let mut c = cfg();
    c.defense = Defense::GradReg;
    c.annotation = Annotation::Rule {
        rule: AnnotationRule::Corners,
        fraction: 1.0,
    };
    let grid: Vec<f64> = (0..=6).map(|e| 10f64.powi(e)).collect();
    let b = balance_lambda(&ds, &c, &grid).unwrap();
    let (ce, pen) = initial_terms(&ds, &c).unwrap();
    assert_eq!((b.cross_entropy, b.penalty), (ce, pen));
    let best = grid
        .iter()
        .map(|&l| (l, (l * pen / ce).log10().abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(b.chosen, best.0);
    for (l, r) in &b.ratios {
        assert_eq!(*r, l * pen / ce);
    }

    c.annotation = Annotation::None;
    assert!(balance_lambda(&ds, &c, &grid).is_err());
    assert!(balance_lambda(&ds, &c, &[]).is_err());
}

#[test]
fn sequential_fae_structure() {
    let ds = data();
    let fae = FaeConfig::new(MaskCutoff::new(0.67).unwrap(), vec![10.0, 100.0], 3);
    let (iters, stop) = fae_sequential(&ds, &cfg(), &fae).unwrap();
    assert!(!iters.is_empty() && iters.len() <= 4);
    assert_eq!(iters[0].lambda1, 0.0);
    assert!(iters[0].annotation.is_zero());
    assert_eq!(iters[0].params.digest(), digest(&ds, &cfg()));
    for (i, w) in iters.windows(2).enumerate() {
        assert!(w[0].annotation.is_subset_of(&w[1].annotation));
        assert_eq!(w[1].lambda1, if i == 0 { 10.0 } else { 100.0 });
    }
    if stop == FaeStop::MaxIters {
        assert_eq!(iters.len(), 4);
    }
}

#[test]
fn simultaneous_fae_without_penalty_is_independent_training() {
    let ds = data();
    let c = cfg();
    let (models, records) = fae_simultaneous(&ds, &c, 3, 0.0).unwrap();
    assert_eq!(records.len(), c.steps);
    for (a, m) in models.iter().enumerate() {
        let mut solo = c.clone();
        solo.init_seed = Some(c.seed + a as u64);
        assert_eq!(m.digest(), digest(&ds, &solo), "model {a}");
    }
    let (penalized, _) = fae_simultaneous(&ds, &c, 3, 1.0).unwrap();
    assert_ne!(penalized[1].digest(), models[1].digest());
}

proptest! {
    #[test]
    fn batcher_epochs_are_permutations(
        n in 1usize..60,
        batch in 1usize..20,
        annotated in proptest::collection::vec(any::<bool>(), 60),
        seed in any::<u64>(),
    ) {
        let batch = batch.min(n);
        let mut m = Tensor::zeros(&[n, 1]);
        for i in 0..n {
            if annotated[i] {
                m.row_mut(i)[0] = 1.0;
            }
        }
        let mask = AnnotationMask::new(m).unwrap();
        let mut b = Batcher::new(n, batch, Some(&mask), seed);
        for _ in 0..2 {
            let mut seen = Vec::new();
            while seen.len() < n {
                let got = b.next_batch();
                prop_assert!(!got.is_empty() && got.len() <= batch);
                seen.extend(got);
            }
            prop_assert_eq!(seen.len(), n);
            // Annotated rows sit at slots ⌊j·n/m⌋ of the epoch order.
            let k = mask.count();
            if k > 0 && k < n {
                for j in 0..k {
                    prop_assert!(mask.row_annotated(seen[j * n / k]));
                }
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
