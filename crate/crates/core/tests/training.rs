use lpca_core::data_io::{synth, FloatSample, SynthSpec};
use lpca_core::model::{LpcaNet, ModelConfig};
use lpca_core::training::augment::{apply, flip_horizontal, AugmentDraw};
use lpca_core::training::*;
use lpca_tensor::gradcheck::gradcheck;
use lpca_tensor::layers::Linear;
use lpca_tensor::{Module, ModuleExt, Shape, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod oracles;
use oracles::optim::{hand_adamw, Scalar};

fn scalar_bce(q: f64, t: f64) -> f64 {
    let q = q.max(1e-7).min(1.0 - 1e-7);
    if t == 1.0 {
        -q.ln()
    } else {
        -(1.0 - q).ln()
    }
}

#[test]
fn bce_examples() {
    let tape = Tape::<f64>::no_grad();
    let target = Tensor::from_dims([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let exact = tape.constant(target.clone());
    let l = bce_loss(&exact, &target).unwrap().value().item();
    assert!(l <= -(1.0f64 - 1e-7).ln() + 1e-15);

    let half = tape.constant(Tensor::full(target.shape(), 0.5));
    let l = bce_loss(&half, &target).unwrap().value().item();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

    let bad = Tensor::from_dims([1, 1, 2, 2], vec![0.0, 0.5, 1.0, 0.0]).unwrap();
    assert!(bce_loss(&half, &bad).is_err());
    let nan = tape.constant(Tensor::full(target.shape(), f64::NAN));
    assert!(bce_loss(&nan, &target).is_err());
}

#[test]
fn bce_matches_scalar_oracle_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..0.95)).collect();
        let t: Vec<f64> = (0..4).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect();
        let target = Tensor::from_dims([1, 1, 2, 2], t.clone()).unwrap();
        let tape = Tape::<f64>::no_grad();
        let pred = tape.constant(Tensor::from_dims([1, 1, 2, 2], q.clone()).unwrap());
        let want = q.iter().zip(&t).map(|(&q, &t)| scalar_bce(q, t)).sum::<f64>() / 4.0;
        assert!((bce_loss(&pred, &target).unwrap().value().item() - want).abs() < 1e-9);

        let x = Tensor::from_dims([1, 1, 2, 2], q).unwrap();
        let report = gradcheck(|p| bce_loss(p, &target), &x, 1e-6, None, 0).unwrap();
        assert!(report.passed(1e-7), "{report:?}");
    }
}

proptest! {
    #[test]
    fn bce_is_non_negative(q in prop::collection::vec(0.0f64..=1.0, 6), bits in prop::collection::vec(any::<bool>(), 6)) {
        let tape = Tape::<f64>::no_grad();
        let t = Tensor::from_dims([1, 1, 2, 3], bits.iter().map(|&b| f64::from(b as u8)).collect()).unwrap();
        let p = tape.constant(Tensor::from_dims([1, 1, 2, 3], q).unwrap());
        prop_assert!(bce_loss(&p, &t).unwrap().value().item() >= 0.0);
    }
}

#[test]
fn adamw_decay_only_closed_form() {
    let mut m = Scalar::new(1.0);
    m.set_grad(0.0);
    let mut opt = AdamW::new(AdamWConfig::default());
    opt.step(&mut m, 1e-4).unwrap();
    assert!((m.value() - 0.999995).abs() < 1e-15);
}

#[test]
fn adamw_first_step_moves_by_lr_against_gradient() {
    for g in [3.0, -0.2] {
        let mut m = Scalar::new(0.5);
        m.set_grad(g);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut m, 1e-3).unwrap();
        let moved = m.value() - 0.5;
        assert!((moved + 1e-3 * f64::signum(g)).abs() < 1e-9);
    }
}

#[test]
fn adamw_three_steps_match_hand_simulation() {
    let grads = [0.7, -1.3, 0.25];
    for wd in [0.05, 0.0] {
        let want = hand_adamw(2.0, &grads, 1e-2, wd);
        let mut m = Scalar::new(2.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: wd,
            ..Default::default()
        });
        for (g, w) in grads.iter().zip(&want) {
            m.set_grad(*g);
            opt.step(&mut m, 1e-2).unwrap();
            assert!((m.value() - w).abs() < 1e-12);
        }
    }
}

#[test]
fn adamw_rejects_non_finite_gradients_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut lin = Linear::<f64>::new(3, 2, &mut rng).unwrap();
    let before = lin.state();
    lin.weight.accumulate_grad(&Tensor::full(lin.weight.shape(), 1.0)).unwrap();
    lin.bias.accumulate_grad(&Tensor::full(lin.bias.shape(), f64::NAN)).unwrap();
    let mut opt = AdamW::new(AdamWConfig::default());
    let err = opt.step(&mut lin, 1e-3).unwrap_err();
    assert!(err.is_numeric());
    assert_eq!(opt.steps(), 0);
    assert_eq!(lin.state(), before);
}

#[test]
fn cosine_schedule() {
    assert_eq!(cosine_lr(0, 1000, 1e-4, 1e-6), 1e-4);
    assert_eq!(cosine_lr(1000, 1000, 1e-4, 1e-6), 1e-6);
    assert_eq!(cosine_lr(1500, 1000, 1e-4, 1e-6), 1e-6);
    assert!((cosine_lr(500, 1000, 1e-4, 1e-6) - (1e-4 + 1e-6) / 2.0).abs() < 1e-18);
    let lrs: Vec<f64> = (0..=1000).map(|s| cosine_lr(s, 1000, 1e-4, 0.0)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

fn sample(seed: u64) -> FloatSample {
    let spec = SynthSpec {
        height: 32,
        width: 48,
        seed,
        ..Default::default()
    };
    synth::generate_one(&spec, 0).unwrap().to_float()
}

#[test]
fn identity_augmentation_is_bit_exact() {
    let s = sample(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(augment(&s, &AugmentSpec::identity(), &mut rng), s);
}

#[test]
fn flip_is_an_involution() {
    let s = sample(2);
    assert_ne!(flip_horizontal(&s), s);
    assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
    let draw = AugmentDraw {
        flip: true,
        crop: None,
        angle: None,
        gaussian_sigma: 0.0,
        impulse_prob: 0.0,
        noise_seed: 0,
    };
    assert_eq!(apply(&apply(&s, &draw), &draw), s);
}

#[test]
fn augmentation_is_seed_deterministic() {
    let s = sample(3);
    let spec = AugmentSpec::default();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..5).map(|_| augment(&s, &spec, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn augmentation_keeps_mask_binary_and_aligned(seed in any::<u64>()) {
        let mut s = sample(seed % 7);
        // Image planes mirror the mask so alignment can be read back.
        for c in 0..3 {
            let hw = s.height * s.width;
            s.rgb[c * hw..(c + 1) * hw].copy_from_slice(&s.mask);
        }
        s.depth = s.mask.clone();
        let spec = AugmentSpec {
            flip_prob: 0.5,
            crop_prob: 1.0,
            rotate_prob: 1.0,
            gaussian_sigma: 0.0,
            impulse_prob: 0.0,
            ..AugmentSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment(&s, &spec, &mut rng);
        prop_assert_eq!((out.height, out.width), (s.height, s.width));
        for (i, &m) in out.mask.iter().enumerate() {
            prop_assert!(m == 0.0 || m == 1.0);
            // Bilinear weights give the nearest source pixel at least 1/4.
            let d = out.depth[i];
            if m == 1.0 {
                prop_assert!(d >= 0.25 - 1e-6);
            } else {
                prop_assert!(d <= 0.75 + 1e-6);
            }
        }
    }
}

#[test]
fn noise_never_touches_the_mask() {
    let s = sample(4);
    let spec = AugmentSpec {
        gaussian_sigma: 0.2,
        impulse_prob: 0.3,
        ..AugmentSpec::identity()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = augment(&s, &spec, &mut rng);
    assert_eq!(out.mask, s.mask);
    assert_ne!(out.rgb, s.rgb);
    assert_ne!(out.depth, s.depth);
    assert!(out.rgb.iter().chain(&out.depth).all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn augment_spec_validation() {
    assert!(AugmentSpec::default().validate().is_ok());
    let bad = AugmentSpec {
        crop_scale: (0.0, 1.0),
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = AugmentSpec {
        flip_prob: 1.5,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

fn tiny_set(n: usize, seed: u64) -> Vec<FloatSample> {
    let spec = SynthSpec {
        seed,
        ..Default::default()
    };
    synth::generate(&spec, n).unwrap().iter().map(|s| s.to_float()).collect()
}

fn overfit_plan(epochs: usize, lr: f64) -> TrainPlan {
    TrainPlan {
        epochs,
        batch_size: 4,
        lr_base: lr,
        lr_min: 0.0,
        checkpoint_every: 0,
        eval_every: 0,
        augment: None,
        ..TrainPlan::tiny()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = tiny_set(4, 5);
    let mut net = LpcaNet::<f32>::new(&ModelConfig::tiny(), 0).unwrap();
    let before: Vec<(String, Vec<u32>)> = params_bits(&net);
    train(&mut net, &data, &[], &overfit_plan(1, 0.0), None).unwrap();
    assert_eq!(params_bits(&net), before);
}

fn params_bits(net: &LpcaNet<f32>) -> Vec<(String, Vec<u32>)> {
    let mut out = vec![];
    net.for_each_param("", &mut |n, p| out.push((n.to_string(), p.value().data().iter().map(|v| v.to_bits()).collect())));
    out
}

#[test]
fn training_replays_identically() {
    let data = tiny_set(6, 6);
    let plan = TrainPlan {
        epochs: 2,
        batch_size: 3,
        lr_base: 1e-3,
        augment: Some(AugmentSpec::default()),
        eval_every: 1,
        ..overfit_plan(2, 1e-3)
    };
    let run = || {
        let mut net = LpcaNet::<f32>::new(&ModelConfig::tiny(), 3).unwrap();
        let out = train(&mut net, &data, &data[..2], &plan, None).unwrap();
        (out.step_losses, out.log.iter().map(LogRow::csv).collect::<Vec<_>>())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.len(), 4);
    assert_eq!(a, b);
}

#[test]
fn overfits_four_samples() {
    let data = tiny_set(4, 7);
    let mut net = LpcaNet::<f32>::new(&ModelConfig::tiny(), 0).unwrap();
    let out = train(&mut net, &data, &[], &overfit_plan(200, 1e-3), None).unwrap();
    assert_eq!(out.step_losses.len(), 200);
    let last = *out.step_losses.last().unwrap();
    assert!(last < 0.05, "final loss {last}");
}

#[test]
fn batches_drop_singletons() {
    let plan = TrainPlan {
        batch_size: 4,
        ..TrainPlan::tiny()
    };
    assert_eq!(plan.batches_per_epoch(8), 2);
    assert_eq!(plan.batches_per_epoch(9), 2);
    assert_eq!(plan.batches_per_epoch(10), 3);
    assert_eq!(plan.total_steps(10), 150);
}

#[test]
fn writes_log_and_checkpoints_and_aborts_on_non_finite() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_set(4, 8);
    let mut net = LpcaNet::<f32>::new(&ModelConfig::tiny(), 0).unwrap();
    let plan = TrainPlan {
        checkpoint_every: 1,
        eval_every: 1,
        ..overfit_plan(2, 1e-3)
    };
    let out = train(&mut net, &data, &data[..2], &plan, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 10 && !l.ends_with(',')));
    assert!(dir.path().join("epoch_0001.ckpt").exists());
    assert_eq!(out.last_checkpoint.as_deref(), Some(dir.path().join("epoch_0002.ckpt").as_path()));
    let good = std::fs::read(dir.path().join("last.ckpt")).unwrap();

    net.for_each_param_mut("", &mut |_, p| p.value_mut().data_mut()[0] = f32::NAN);
    let err = train(&mut net, &data, &[], &plan, Some(dir.path())).unwrap_err();
    assert!(err.is_numeric(), "{err}");
    assert_eq!(std::fs::read(dir.path().join("last.ckpt")).unwrap(), good);
}

#[test]
fn plan_validation() {
    assert!(TrainPlan::tiny().validate().is_ok());
    assert!(TrainPlan { epochs: 0, ..TrainPlan::tiny() }.validate().is_err());
    assert!(TrainPlan { lr_min: 1.0, ..TrainPlan::tiny() }.validate().is_err());
    let shape = Shape::new(1, 1, 1, 1).unwrap();
    assert_eq!(shape.numel(), 1);
}
