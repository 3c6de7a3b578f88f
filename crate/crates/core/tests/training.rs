use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tssd::audio::{MemorySource, Utterance};
use tssd::models::{Mode, Model, ModelConfig};
use tssd::nn::{Tape, Tensor};
use tssd::training::{
    cross_entropy, decay_lr, fit, mixup_loss, sample_beta, wce_loss, AdamState, ClassWeights, LossMode, TrainConfig,
};
use tssd::Label;

fn label_of(b: bool) -> Label {
    if b {
        Label::Bonafide
    } else {
        Label::Spoof
    }
}

/// Reference CE: `−(1/B) Σ log softmax(z_i)[y_i]` computed directly.
fn reference_ce(logits: &[f64], labels: &[Label]) -> f64 {
    let mut total = 0.0;
    for (row, l) in logits.chunks(2).zip(labels) {
        let m = row[0].max(row[1]);
        let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
        total -= row[l.class_index().unwrap()] - lse;
    }
    total / labels.len() as f64
}

fn loss_value(logits: &[f64], f: impl Fn(&mut Tape<f64>, tssd::nn::Var) -> tssd::nn::Var) -> f64 {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(vec![logits.len() / 2, 2], logits.to_vec()).unwrap());
    let lp = tape.log_softmax(z).unwrap();
    let loss = f(&mut tape, lp);
    tape.value(loss).values()[0]
}

prop_compose! {
    fn batch()(n in 1usize..16)(
        logits in prop::collection::vec(-6.0f64..6.0, 2 * n),
        ys in prop::collection::vec(any::<bool>(), n),
        js in prop::collection::vec(any::<bool>(), n),
    ) -> (Vec<f64>, Vec<Label>, Vec<Label>) {
        (logits, ys.into_iter().map(label_of).collect(), js.into_iter().map(label_of).collect())
    }
}

proptest! {
    #[test]
    fn unit_weight_wce_equals_ce((z, y, _) in batch()) {
        let wce = loss_value(&z, |t, lp| wce_loss(t, lp, &y, &ClassWeights([1.0, 1.0])).unwrap());
        let ce = reference_ce(&z, &y);
        prop_assert!((wce - ce).abs() <= 1e-12, "{} vs {}", wce, ce);
    }

    #[test]
    fn mixup_endpoints_are_plain_ce((z, y, p) in batch()) {
        let ce_y = loss_value(&z, |t, lp| cross_entropy(t, lp, &y).unwrap());
        let ce_p = loss_value(&z, |t, lp| cross_entropy(t, lp, &p).unwrap());
        prop_assert_eq!(loss_value(&z, |t, lp| mixup_loss(t, lp, &y, &p, 1.0).unwrap()), ce_y);
        prop_assert_eq!(loss_value(&z, |t, lp| mixup_loss(t, lp, &y, &p, 0.0).unwrap()), ce_p);
        prop_assert_eq!(loss_value(&z, |t, lp| mixup_loss(t, lp, &y, &y, 0.37).unwrap()), ce_y);
    }

    #[test]
    fn mixup_symmetry_is_exact((z, y, p) in batch(), lambda in 0.5f64..=1.0) {
        // 1 − λ is exact for λ ∈ [0.5, 1], so both orderings see identical coefficients.
        let a = loss_value(&z, |t, lp| mixup_loss(t, lp, &y, &p, lambda).unwrap());
        let b = loss_value(&z, |t, lp| mixup_loss(t, lp, &p, &y, 1.0 - lambda).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lr_schedule_strictly_decreases(base in 1e-5f64..1.0, decay in 0.5f64..0.999) {
        for e in 0..50 {
            prop_assert!(decay_lr(base, decay, e + 1) < decay_lr(base, decay, e));
        }
    }
}

#[test]
fn mixup_symmetry_general_lambda_within_rounding() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.random_range(1..10);
        let z: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<Label> = (0..n).map(|_| label_of(rng.random())).collect();
        let p: Vec<Label> = (0..n).map(|_| label_of(rng.random())).collect();
        let lambda: f64 = rng.random();
        let a = loss_value(&z, |t, lp| mixup_loss(t, lp, &y, &p, lambda).unwrap());
        let b = loss_value(&z, |t, lp| mixup_loss(t, lp, &p, &y, 1.0 - lambda).unwrap());
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }
}

#[test]
fn adam_first_step_hand_value() {
    let mut cfg = ModelConfig::with_channels(tssd::models::Family::Res, vec![2], 1);
    cfg.stem_channels = 2;
    cfg.input_length = 8;
    let mut m: Model<f32> = Model::build(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (_, t) in m.parameters_mut() {
        let n = t.len();
        t.set_grad(vec![1.0; n]).unwrap();
    }
    let before: Vec<f32> = m.parameters().iter().flat_map(|(_, t)| t.values().to_vec()).collect();
    let mut adam = AdamState::new(&m, 1e-3);
    adam.step(&mut m, 1e-3).unwrap();
    let after: Vec<f32> = m.parameters().iter().flat_map(|(_, t)| t.values().to_vec()).collect();
    let expected_delta = -1e-3 / (1.0 + 1e-8);
    for (a, b) in after.iter().zip(&before) {
        let want = (*b as f64 + expected_delta) as f32;
        assert_eq!(*a, want);
    }
    assert_eq!(adam.step, 1);
    assert!((adam.first_moment(0)[0] - 0.1).abs() < 1e-7);
    assert!((adam.second_moment(0)[0] - 0.001).abs() < 1e-9);
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let cfg = tiny_config(32);
    let mut m: Model<f32> = Model::build(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (_, t) in m.parameters_mut() {
        let n = t.len();
        t.set_grad(vec![0.0; n]).unwrap();
    }
    let before = m.clone();
    AdamState::new(&m, 1e-3).step(&mut m, 1e-3).unwrap();
    let same = m.parameters().iter().zip(before.parameters()).all(|((_, a), (_, b))| a.values() == b.values());
    assert!(same);
}

#[test]
fn adam_aborts_on_non_finite_gradient() {
    let cfg = tiny_config(32);
    let mut m: Model<f32> = Model::build(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (i, (_, t)) in m.parameters_mut().into_iter().enumerate() {
        let mut g = vec![0.5; t.len()];
        if i == 3 {
            g[0] = f32::NAN;
        }
        t.set_grad(g).unwrap();
    }
    let before = m.clone();
    let mut adam = AdamState::new(&m, 1e-3);
    assert!(adam.step(&mut m, 1e-3).is_err());
    assert_eq!(adam.step, 0);
    let same = m.parameters().iter().zip(before.parameters()).all(|((_, a), (_, b))| a.values() == b.values());
    assert!(same);
}

#[test]
fn beta_draws_match_their_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    for alpha in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let draws: Vec<f64> = (0..n).map(|_| sample_beta(alpha, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "alpha {alpha}: mean {mean}");
        assert!(draws.iter().all(|&l| l > 0.0 && l < 1.0));
    }
    // Uniform law at α = 1: decile occupancy within 1% of 0.1.
    let draws: Vec<f64> = (0..n).map(|_| sample_beta(1.0, &mut rng).unwrap()).collect();
    for k in 0..10 {
        let lo = k as f64 / 10.0;
        let frac = draws.iter().filter(|&&l| l >= lo && l < lo + 0.1).count() as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "decile {k}: {frac}");
    }
    let middle = |alpha: f64, rng: &mut ChaCha8Rng| {
        (0..n).filter(|_| (0.4..0.6).contains(&sample_beta(alpha, rng).unwrap())).count()
    };
    assert!(middle(0.1, &mut rng) < middle(5.0, &mut rng));
}

#[test]
fn near_zero_alpha_behaves_like_plain_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let trials = 2000;
    let mut gap = 0.0;
    for _ in 0..trials {
        let n = 8;
        let z: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y: Vec<Label> = (0..n).map(|_| label_of(rng.random())).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let p: Vec<Label> = perm.iter().map(|&j| y[j]).collect();
        let lambda = sample_beta(1e-3, &mut rng).unwrap();
        let mixed = loss_value(&z, |t, lp| mixup_loss(t, lp, &y, &p, lambda).unwrap());
        // The nearer endpoint decides which labels the draw reproduces.
        let target = if lambda >= 0.5 { &y } else { &p };
        gap += (mixed - reference_ce(&z, target)).abs();
    }
    let mean_gap = gap / trials as f64;
    assert!(mean_gap < 1e-3, "mean gap {mean_gap}");
}

fn tiny_config(len: usize) -> ModelConfig {
    let mut cfg = ModelConfig::with_channels(tssd::models::Family::Res, vec![4, 4], 1);
    cfg.stem_channels = 4;
    cfg.fc = [8, 8];
    cfg.input_length = len;
    cfg
}

/// Class 1 carries a strong high-frequency component, class 0 is smooth.
fn toy_source(n_per_class: usize, len: usize, seed: u64) -> MemorySource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utts = Vec::new();
    for i in 0..2 * n_per_class {
        let bona = i % 2 == 0;
        let f = rng.random_range(0.01..0.03);
        let samples = (0..len)
            .map(|t| {
                let base = (t as f32 * f).sin() * 0.4;
                let hf = if bona { if t % 2 == 0 { 0.3 } else { -0.3 } } else { 0.0 };
                base + hf + rng.random_range(-0.05..0.05)
            })
            .collect();
        utts.push(Utterance { id: format!("u{i}"), samples, label: label_of(bona) });
    }
    MemorySource::new(utts, len)
}

#[test]
fn fit_is_deterministic_and_visits_each_example_once() {
    let (train, dev) = (toy_source(20, 64, 1), toy_source(8, 64, 2));
    let cfg = TrainConfig { batch_size: 8, max_epochs: 3, ..TrainConfig::default() };
    let run = |loss: LossMode| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let model = Model::build(&tiny_config(64), &mut rng).unwrap();
        let mut lines = Vec::new();
        let out = fit(model, &train, &dev, &TrainConfig { loss, ..cfg.clone() }, &mut rng, |l| lines.push(l.to_string())).unwrap();
        (out, lines)
    };
    for loss in [LossMode::Weighted, LossMode::Mixup { alpha: 1.0 }] {
        let (a, la) = run(loss);
        let (b, lb) = run(loss);
        assert_eq!(la, lb);
        assert_eq!(la.len(), 3);
        assert!(la[0].starts_with("epoch=1 lr=0.001 loss="), "{}", la[0]);
        assert!(la[2].contains(" dev_eer="));
        assert_eq!(a.best.model, b.best.model);
        assert_eq!(a.best.optimizer, b.best.optimizer);
        for order in &a.visits {
            let mut sorted = order.clone();
            sorted.sort();
            assert_eq!(sorted, (0..40).collect::<Vec<_>>());
        }
        let min = a.logs.iter().map(|l| l.dev_eer).fold(f64::INFINITY, f64::min);
        let first_min = a.logs.iter().find(|l| l.dev_eer == min).unwrap().epoch;
        assert_eq!(a.best_epoch, first_min);
        assert_eq!(a.best.model.mode(), Mode::Eval);
        assert!(a.best.model.layers().iter().all(|l| l.weight.grad().is_none()));
    }
}

#[test]
fn fit_learns_a_separable_toy_problem() {
    let (train, dev) = (toy_source(32, 64, 5), toy_source(16, 64, 6));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::build(&tiny_config(64), &mut rng).unwrap();
    let cfg = TrainConfig { batch_size: 16, max_epochs: 15, base_lr: 3e-3, ..TrainConfig::default() };
    let out = fit(model, &train, &dev, &cfg, &mut rng, |_| {}).unwrap();
    assert!(out.best_eer <= 0.05, "best dev EER {}", out.best_eer);
    let scores = tssd::training::score_utterances(&out.best.model, &dev, 7).unwrap();
    assert_eq!(tssd::metrics::compute_eer(&scores).unwrap().eer, out.best_eer);
}

#[test]
fn fit_rejects_degenerate_sets() {
    let train = toy_source(4, 32, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model: Model<f32> = Model::build(&tiny_config(32), &mut rng).unwrap();
    let one_class = MemorySource::new(
        vec![Utterance { id: "a".into(), samples: vec![0.1; 32], label: Label::Spoof }],
        32,
    );
    let empty = MemorySource::new(vec![], 32);
    let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
    assert!(fit(model.clone(), &train, &one_class, &cfg, &mut rng, |_| {}).is_err());
    assert!(fit(model.clone(), &train, &empty, &cfg, &mut rng, |_| {}).is_err());
    assert!(fit(model.clone(), &empty, &train, &cfg, &mut rng, |_| {}).is_err());
    let bad = TrainConfig { batch_size: 0, ..cfg };
    assert!(fit(model, &train, &train, &bad, &mut rng, |_| {}).is_err());
}
