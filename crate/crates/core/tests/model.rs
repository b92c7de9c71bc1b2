use lpca_core::model::accounting::{count_params_flops, layer_costs};
use lpca_core::model::*;
use lpca_tensor::layers::{Mode, UpsampleMode};
use lpca_tensor::{Module, ModuleExt, Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod oracles;

fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(Shape::from_dims(dims).unwrap(), |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn inputs(cfg: &ModelConfig, n: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = cfg.input_hw;
    (
        Tensor::from_fn(Shape::new(n, 3, h, w).unwrap(), |_, _, _, _| rng.gen()),
        Tensor::from_fn(Shape::new(n, 1, h, w).unwrap(), |_, _, _, _| rng.gen()),
    )
}

#[test]
fn tiny_stage_shapes() {
    let cfg = ModelConfig::tiny();
    let net = LpcaNet::<f32>::new(&cfg, 1).unwrap();
    let (rgb, depth) = inputs(&cfg, 2, 2);
    let tape = Tape::no_grad();
    let t = net.trace(&tape.constant(rgb), &tape.constant(depth), Mode::Eval).unwrap();
    let rgb_c = [8, 16, 32, 64];
    let depth_c = [16, 32, 64, 128];
    for (i, s) in t.stages.iter().enumerate() {
        let side = 16 >> i;
        assert_eq!(s.rgb.shape().dims(), [2, rgb_c[i], side, side]);
        assert_eq!(s.depth.shape().dims(), [2, depth_c[i], side, side]);
        assert_eq!(s.fused_ca.shape().dims(), [2, depth_c[i], side, side]);
        assert_eq!(s.sfe_out.is_some(), i < 3);
    }
    assert_eq!(t.f_down.shape().dims()[2..], [1, 1]);
    assert_eq!(t.mask.shape().dims(), [2, 1, 64, 64]);
}

#[test]
fn output_is_a_probability_map() {
    // f64: an untrained net in eval mode has logits large enough for an f32
    // sigmoid to round to exactly 0 or 1.
    let cfg = ModelConfig::tiny();
    let net = LpcaNet::<f64>::new(&cfg, 1).unwrap();
    let (rgb, depth) = inputs(&cfg, 2, 2);
    let tape = Tape::no_grad();
    for mode in [Mode::Eval, Mode::Train] {
        let out = net.forward(&tape.constant(rgb.cast()), &tape.constant(depth.cast()), mode).unwrap();
        assert_eq!(out.shape().dims(), [2, 1, 64, 64]);
        assert!(out.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn paper_preset_structure_at_small_input() {
    let mut cfg = ModelConfig::paper();
    cfg.input_hw = (64, 128);
    let net = LpcaNet::<f32>::new(&cfg, 0).unwrap();
    match &net.decoder.head {
        Head::PixelShuffle(conv) => assert_eq!(conv.out_channels(), 64 * 64),
        other => panic!("unexpected head {other:?}"),
    }
    let (rgb, depth) = inputs(&cfg, 1, 0);
    let tape = Tape::no_grad();
    let t = net.trace(&tape.constant(rgb), &tape.constant(depth), Mode::Eval).unwrap();
    let rgb_c = [24, 32, 96, 320];
    for (i, s) in t.stages.iter().enumerate() {
        assert_eq!(s.rgb.shape().dims(), [1, rgb_c[i], 16 >> i, 32 >> i]);
        assert_eq!(s.depth.shape().dims(), [1, 64 << i, 16 >> i, 32 >> i]);
    }
    assert_eq!(t.mask.shape().dims(), [1, 1, 64, 128]);
}

#[test]
fn lpm_paper_shapes() {
    let cfg = ModelConfig::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let lpm = Lpm::<f32>::new(&cfg, &mut rng).unwrap();
    let tape = Tape::no_grad();
    let depth = tape.constant(Tensor::full(Shape::new(1, 1, 320, 320).unwrap(), 0.5));
    let outs = lpm.forward(&depth, Mode::Eval).unwrap();
    let want = [[1, 64, 80, 80], [1, 128, 40, 40], [1, 256, 20, 20], [1, 512, 10, 10]];
    for (o, w) in outs.iter().zip(want) {
        assert_eq!(o.shape().dims(), w);
    }
}

fn zero_biases<M: Module<f64>>(m: &mut M) {
    m.for_each_param_mut("", &mut |name, p| {
        if name.ends_with("bias") || name.ends_with("beta") {
            p.value_mut().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    });
}

#[test]
fn lpm_and_sfe_map_zero_to_zero() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lpm = Lpm::<f64>::new(&cfg, &mut rng).unwrap();
    zero_biases(&mut lpm);
    let tape = Tape::no_grad();
    let outs = lpm.forward(&tape.constant(Tensor::zeros(Shape::new(1, 1, 64, 64).unwrap())), Mode::Eval).unwrap();
    for o in outs {
        assert!(o.value().data().iter().all(|&v| v == 0.0));
    }

    let mut sfe = Sfe::<f64>::new(16, &cfg, &mut rng).unwrap();
    zero_biases(&mut sfe);
    let out = sfe.forward(&tape.constant(Tensor::zeros(Shape::new(2, 16, 5, 7).unwrap())), Mode::Eval).unwrap();
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn sfe_preserves_spatial_shape_and_rejects_wrong_channels() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sfe = Sfe::<f64>::new(8, &cfg, &mut rng).unwrap();
    let tape = Tape::no_grad();
    for (h, w) in [(1, 1), (2, 5), (7, 3), (8, 8)] {
        let x = tape.constant(random([1, 8, h, w], &mut rng));
        assert_eq!(sfe.forward(&x, Mode::Eval).unwrap().shape().dims(), [1, 8, h, w]);
    }
    assert!(sfe.forward(&tape.constant(random([1, 4, 3, 3], &mut rng)), Mode::Eval).is_err());
}

#[test]
fn sfe_gradcheck() {
    use lpca_tensor::checks::project;
    use lpca_tensor::gradcheck::gradcheck_params;
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sfe = Sfe::<f64>::new(4, &cfg, &mut rng).unwrap();
    // Frozen, non-trivial batch statistics; in train mode the conv bias in
    // front of a BN has an exactly zero gradient, which relative error
    // cannot judge.
    sfe.for_each_buffer_mut("", &mut |name, b| {
        let lo = if name.ends_with("running_var") { 0.5 } else { -0.5 };
        b.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(lo..lo + 1.0));
    });
    let x = random([2, 4, 3, 4], &mut rng);
    let report = gradcheck_params(
        &mut sfe,
        |m, tape| project(&m.forward(&tape.constant(x.clone()), Mode::Eval)?),
        1e-6,
        None,
        1,
    )
    .unwrap();
    assert!(report.passed(1e-5), "{report:?}");
}

#[test]
fn end_to_end_gradcheck_tiny() {
    let report = end_to_end_gradcheck(0, 200, 1e-6).unwrap();
    assert_eq!(report.checked, 200);
    assert!(report.passed(1e-4), "{report:?}");
}

#[test]
fn cam_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cam = Cam::<f64>::new(4, 4, 4, 2, &mut rng).unwrap();
    assert_eq!(cam.head_dim(), 2);
    let fr = random([1, 4, 2, 2], &mut rng);
    let fd = random([1, 4, 2, 2], &mut rng);

    let (y, rows) = oracles::cam::forward(&cam, &fr, &fd, 2);
    let l = 4;

    let tape = Tape::no_grad();
    let (r, d) = (tape.constant(fr), tape.constant(fd));
    let out = cam.forward(&r, &d).unwrap();
    assert_eq!(out.shape().dims(), [1, 4, 2, 2]);
    for li in 0..l {
        for c in 0..4 {
            assert!((out.value().at(0, c, li / 2, li % 2) - y[li][c]).abs() < 1e-6);
        }
    }
    let w = cam.attention_weights(&r, &d).unwrap();
    assert_eq!(w.shape().dims(), [1, 2, 4, 4]);
    for (h, chunk) in w.data().chunks(4).enumerate() {
        assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(chunk.iter().all(|&p| p >= 0.0));
        for (a, b) in chunk.iter().zip(&rows[h]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn cam_single_token_returns_projected_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cam = Cam::<f64>::new(3, 5, 8, 4, &mut rng).unwrap();
    let tape = Tape::no_grad();
    let fr = tape.constant(random([2, 3, 1, 1], &mut rng));
    let fd = tape.constant(random([2, 5, 1, 1], &mut rng));
    let attended = cam.attend(&fr, &fd).unwrap();
    let v = cam.value.forward(&to_tokens(&fd).unwrap()).unwrap();
    assert_eq!(attended.value().data(), v.value().data());
}

#[test]
fn cam_constant_values_give_constant_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cam = Cam::<f64>::new(4, 4, 4, 1, &mut rng).unwrap();
    for lin in [&mut cam.query, &mut cam.key, &mut cam.value, &mut cam.output] {
        let eye = Tensor::from_fn(Shape::new(1, 1, 4, 4).unwrap(), |_, _, o, i| f64::from(o == i));
        lin.weight.set_value(eye).unwrap();
        lin.bias.value_mut().data_mut().iter_mut().for_each(|b| *b = 0.0);
    }
    let tape = Tape::no_grad();
    let fr = tape.constant(random([1, 4, 3, 3], &mut rng));
    let fd = tape.constant(Tensor::from_fn(Shape::new(1, 4, 3, 3).unwrap(), |_, c, _, _| c as f64 - 1.5));
    let out = cam.forward(&fr, &fd).unwrap();
    for c in 0..4 {
        for p in 0..9 {
            assert!((out.value().at(0, c, p / 3, p % 3) - (c as f64 - 1.5)).abs() < 1e-12);
        }
    }
}

#[test]
fn cam_is_invariant_to_key_value_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cam = Cam::<f64>::new(6, 4, 8, 2, &mut rng).unwrap();
    let fr = random([1, 6, 3, 4], &mut rng);
    let fd = random([1, 4, 3, 4], &mut rng);
    let mut perm: Vec<usize> = (0..12).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(&mut rng);
    let fd_perm = Tensor::from_fn(fd.shape(), |n, c, h, w| {
        let src = perm[h * 4 + w];
        fd.at(n, c, src / 4, src % 4)
    });
    let tape = Tape::no_grad();
    let a = cam.forward(&tape.constant(fr.clone()), &tape.constant(fd)).unwrap();
    let b = cam.forward(&tape.constant(fr), &tape.constant(fd_perm)).unwrap();
    assert!(a.value().max_abs_diff(b.value()) < 1e-5);
}

#[test]
fn cam_rejects_bad_partition_and_mismatched_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    assert!(Cam::<f64>::new(4, 4, 6, 4, &mut rng).is_err());
    let cam = Cam::<f64>::new(4, 4, 4, 2, &mut rng).unwrap();
    let tape = Tape::no_grad();
    let r = tape.constant(random([1, 4, 2, 2], &mut rng));
    let d = tape.constant(random([1, 4, 2, 3], &mut rng));
    assert!(cam.forward(&r, &d).is_err());
}

#[test]
fn eval_forward_is_deterministic() {
    let cfg = ModelConfig::tiny();
    let (rgb, depth) = inputs(&cfg, 1, 11);
    let run = || {
        let net = LpcaNet::<f32>::new(&cfg, 42).unwrap();
        let tape = Tape::no_grad();
        let out = net.forward(&tape.constant(rgb.clone()), &tape.constant(depth.clone()), Mode::Eval).unwrap();
        out.value().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn ablated(a: Ablation) -> ModelConfig {
    ModelConfig::tiny().with_ablation(a)
}

#[test]
fn ablations_construct_and_run() {
    let variants = vec![
        ablated(Ablation::NoCam),
        ablated(Ablation::NoSfe),
        ablated(Ablation::SfeStages([true, false, false, false])),
        ablated(Ablation::LpmWidth(24)),
        ablated(Ablation::Upsample(UpsampleMode::TransposedConv)),
        ablated(Ablation::Upsample(UpsampleMode::Bilinear)),
        ablated(Ablation::Upsample(UpsampleMode::Nearest)),
        ablated(Ablation::Upsample(UpsampleMode::StagedPixelShuffle)),
        ablated(Ablation::Upsample(UpsampleMode::PatchExpand)),
    ];
    for cfg in variants {
        cfg.validate().unwrap();
        let net = LpcaNet::<f32>::new(&cfg, 0).unwrap();
        let (rgb, depth) = inputs(&cfg, 2, 0);
        let tape = Tape::new();
        let out = net.forward(&tape.constant(rgb), &tape.constant(depth), Mode::Train).unwrap();
        assert_eq!(out.shape().dims(), [2, 1, 64, 64], "{cfg:?}");
        let macs = tape.macs();
        let (params, flops) = count_params_flops(&cfg);
        assert_eq!(net.param_count() as u64, params, "{cfg:?}");
        // Two images were pushed through.
        assert_eq!(macs, 2 * flops, "{cfg:?}");
    }
}

#[test]
fn wider_depth_stream_builds_on_paper_preset() {
    let cfg = ModelConfig::paper().with_ablation(Ablation::LpmWidth(96));
    assert_eq!(cfg.depth_channels, [96, 192, 384, 768]);
    let (params, _) = count_params_flops(&cfg);
    let (base, _) = count_params_flops(&ModelConfig::paper());
    assert!(params > base);
    let mut small = cfg.clone();
    small.input_hw = (64, 64);
    let net = LpcaNet::<f32>::new(&small, 0).unwrap();
    let (rgb, depth) = inputs(&small, 1, 0);
    let tape = Tape::no_grad();
    let out = net.forward(&tape.constant(rgb), &tape.constant(depth), Mode::Eval).unwrap();
    assert_eq!(out.shape().dims(), [1, 1, 64, 64]);
}

fn attention_params(cfg: &ModelConfig) -> u64 {
    layer_costs(cfg).iter().filter(|l| l.name.contains(".cam.")).map(|l| l.params).sum()
}

#[test]
fn removing_cam_removes_attention_parameters() {
    let base = attention_params(&ModelConfig::tiny());
    assert!(base > 0);
    assert!(attention_params(&ablated(Ablation::NoCam)) < base);
}

#[test]
fn accounting_matches_built_model() {
    for cfg in [ModelConfig::tiny(), ModelConfig::paper()] {
        let net = LpcaNet::<f32>::new(&cfg, 0).unwrap();
        let (params, _) = count_params_flops(&cfg);
        assert_eq!(net.param_count() as u64, params);
        // Every layer's parameters are accounted for under its own name.
        let costs = layer_costs(&cfg);
        let mut per_prefix = std::collections::BTreeMap::<String, u64>::new();
        net.for_each_param("", &mut |name, p| {
            let layer = name.rsplit_once('.').map_or(name, |(l, _)| l).to_string();
            *per_prefix.entry(layer).or_default() += p.value().numel() as u64;
        });
        for l in costs.iter().filter(|l| l.params > 0) {
            assert_eq!(per_prefix.get(&l.name), Some(&l.params), "{}", l.name);
        }
    }
}

#[test]
fn tiny_tape_macs_match_accounting() {
    let cfg = ModelConfig::tiny();
    let net = LpcaNet::<f32>::new(&cfg, 0).unwrap();
    let (rgb, depth) = inputs(&cfg, 1, 0);
    let tape = Tape::no_grad();
    net.forward(&tape.constant(rgb), &tape.constant(depth), Mode::Eval).unwrap();
    assert_eq!(tape.macs(), count_params_flops(&cfg).1);
}
