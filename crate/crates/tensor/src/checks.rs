//! Named finite-difference checks for every differentiable op and layer.
//!
//! Each check builds small random f64 inputs from a seed, reduces the op's
//! output with a fixed random projection (so no symmetry hides an error) and
//! compares the tape gradient with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{gradcheck_multi, gradcheck_params, GradcheckReport};
use crate::layers::{
    conv2d, conv2d_direct, conv_transpose2d, linear, pixel_shuffle, pixel_unshuffle, upsample_bilinear, upsample_nearest,
    BatchNorm2d, ConvSpec, Mode, Pool2d, PoolKind,
};
use crate::{Result, Shape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

/// A seeded gradient check.
pub struct OpCheck {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradcheckReport>,
}

pub fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = Shape::from_dims(shape).expect("non-zero dims");
    Tensor::from_fn(s, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Values in ±[margin, 1], away from kinks at 0.
pub fn random_away_from_zero(shape: [usize; 4], margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = Shape::from_dims(shape).expect("non-zero dims");
    Tensor::from_fn(s, |_, _, _, _| {
        let m = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ out ⊙ R` for a fixed pseudo-random `R` in [0.5, 1.5].
pub fn project<'t>(out: &Var<'t, f64>) -> Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = Tensor::from_fn(out.shape(), |_, _, _, _| rng.gen_range(0.5..1.5));
    Ok(out.mul(&out.tape().constant(r))?.sum_all())
}

fn run<F>(inputs: Vec<Tensor<f64>>, f: F) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    gradcheck_multi(|v| project(&f(v)?), &inputs, DEFAULT_EPS, None, 7)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn conv_check(seed: u64, x: [usize; 4], w: [usize; 4], spec: ConvSpec) -> Result<GradcheckReport> {
    let mut r = rng(seed);
    let inputs = vec![random(x, &mut r), random(w, &mut r), random([1, w[0], 1, 1], &mut r)];
    run(inputs, move |v| conv2d(&v[0], &v[1], Some(&v[2]), spec))
}

fn bn_check(seed: u64, mode: Mode) -> Result<GradcheckReport> {
    let mut r = rng(seed);
    let x = random([2, 3, 3, 3], &mut r);
    let mut bn = BatchNorm2d::<f64>::new(3)?;
    bn.gamma.set_value(random([1, 3, 1, 1], &mut r))?;
    bn.beta.set_value(random([1, 3, 1, 1], &mut r))?;
    bn.set_running(random([1, 3, 1, 1], &mut r), random([1, 3, 1, 1], &mut r).map(|v| v.abs() + 0.5))?;
    let layer = bn.clone();
    let mut report = run(vec![x.clone()], move |v| layer.forward(&v[0], mode))?;
    let wrt_params = gradcheck_params(
        &mut bn,
        |m, tape| project(&m.forward(&tape.constant(x.clone()), mode)?),
        DEFAULT_EPS,
        None,
        seed,
    )?;
    report.merge(wrt_params);
    Ok(report)
}

fn faulty_double(seed: u64) -> Result<GradcheckReport> {
    let mut r = rng(seed);
    run(vec![random([1, 1, 2, 3], &mut r)], |v| {
        let x = &v[0];
        let out = x.value().map(|a| a * a);
        // d(x²)/dx reported as 4x instead of 2x.
        Ok(x.tape().record(&[x], out, |ctx| {
            let g = ctx
                .grad()
                .data()
                .iter()
                .zip(ctx.input(0).data())
                .map(|(&g, &x)| 4.0 * x * g)
                .collect();
            ctx.accumulate(0, g);
        }))
    })
}

/// A check whose backward is deliberately wrong by a factor of 2.
pub const INJECTED_FAULT: OpCheck = OpCheck {
    name: "injected_fault",
    run: faulty_double,
};

/// Every op in the tensor core and the layer set.
pub fn all() -> Vec<OpCheck> {
    vec![
        OpCheck {
            name: "add",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([2, 3, 4, 4], &mut r), random([2, 3, 4, 4], &mut r)], |v| v[0].add(&v[1]))
            },
        },
        OpCheck {
            name: "add_channel_bias",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([2, 3, 4, 4], &mut r), random([1, 3, 1, 1], &mut r)], |v| v[0].add(&v[1]))
            },
        },
        OpCheck {
            name: "mul",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 3, 3], &mut r), random([1, 2, 3, 3], &mut r)], |v| v[0].mul(&v[1]))
            },
        },
        OpCheck {
            name: "scale",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 3, 3], &mut r)], |v| Ok(v[0].scale(-2.5)))
            },
        },
        OpCheck {
            name: "relu",
            run: |s| {
                let mut r = rng(s);
                run(vec![random_away_from_zero([2, 3, 4, 4], 1e-3, &mut r)], |v| Ok(v[0].relu()))
            },
        },
        OpCheck {
            name: "relu6",
            run: |s| {
                let mut r = rng(s);
                let x = random_away_from_zero([2, 3, 4, 4], 1e-3, &mut r).map(|v| v * 8.0);
                let x = x.map(|v| if (v - 6.0).abs() < 1e-3 { v + 0.01 } else { v });
                run(vec![x], |v| Ok(v[0].relu6()))
            },
        },
        OpCheck {
            name: "sigmoid",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 3, 3], &mut r).map(|v| 3.0 * v)], |v| Ok(v[0].sigmoid()))
            },
        },
        OpCheck {
            name: "sum_all",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([2, 3, 2, 2], &mut r)], |v| Ok(v[0].relu().sum_all()))
            },
        },
        OpCheck {
            name: "mean_all",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([2, 3, 2, 2], &mut r)], |v| Ok(v[0].mul(&v[0])?.mean_all()))
            },
        },
        OpCheck {
            name: "concat_channels",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([2, 3, 2, 2], &mut r), random([2, 1, 2, 2], &mut r)], |v| {
                    v[0].concat_channels(&v[1])
                })
            },
        },
        OpCheck {
            name: "reshape_permute",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([2, 3, 2, 4], &mut r)], |v| {
                    v[0].reshape(Shape::new(2, 3, 1, 8)?)?.permute([0, 3, 1, 2])
                })
            },
        },
        OpCheck {
            name: "matmul",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 3, 4], &mut r), random([1, 2, 4, 5], &mut r)], |v| v[0].matmul(&v[1]))
            },
        },
        OpCheck {
            name: "softmax",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 1, 1, 7], &mut r).map(|v| 2.0 * v)], |v| v[0].softmax_last())
            },
        },
        OpCheck {
            name: "attention",
            run: |s| {
                let mut r = rng(s);
                run(
                    vec![random([1, 2, 4, 3], &mut r), random([1, 2, 5, 3], &mut r), random([1, 2, 5, 2], &mut r)],
                    |v| v[0].attention(&v[1], &v[2], 0.7),
                )
            },
        },
        OpCheck {
            name: "conv4x4_s2",
            run: |s| conv_check(s, [2, 3, 8, 8], [4, 3, 4, 4], ConvSpec::new(2, (1, 1))),
        },
        OpCheck {
            name: "conv4x4_s4",
            run: |s| conv_check(s, [1, 1, 8, 8], [3, 1, 4, 4], ConvSpec::new(4, (0, 0))),
        },
        OpCheck {
            name: "conv3x3",
            run: |s| conv_check(s, [2, 2, 5, 5], [3, 2, 3, 3], ConvSpec::new(1, (1, 1))),
        },
        OpCheck {
            name: "conv3x3_s2",
            run: |s| conv_check(s, [1, 2, 6, 6], [2, 2, 3, 3], ConvSpec::new(2, (1, 1))),
        },
        OpCheck {
            name: "conv1x3",
            run: |s| conv_check(s, [1, 2, 4, 5], [2, 2, 1, 3], ConvSpec::new(1, (0, 1))),
        },
        OpCheck {
            name: "conv3x1",
            run: |s| conv_check(s, [1, 2, 5, 4], [2, 2, 3, 1], ConvSpec::new(1, (1, 0))),
        },
        OpCheck {
            name: "conv1x1",
            run: |s| conv_check(s, [2, 3, 3, 3], [4, 3, 1, 1], ConvSpec::default()),
        },
        OpCheck {
            name: "conv_depthwise3x3",
            run: |s| {
                let spec = ConvSpec {
                    stride: (1, 1),
                    padding: (1, 1),
                    groups: 3,
                };
                conv_check(s, [1, 3, 4, 4], [3, 1, 3, 3], spec)
            },
        },
        OpCheck {
            name: "conv3x3_direct",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![random([2, 2, 5, 5], &mut r), random([3, 2, 3, 3], &mut r), random([1, 3, 1, 1], &mut r)];
                run(inputs, |v| conv2d_direct(&v[0], &v[1], Some(&v[2]), ConvSpec::new(2, (1, 1))))
            },
        },
        OpCheck {
            name: "conv_transpose",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![random([1, 3, 3, 3], &mut r), random([3, 2, 2, 2], &mut r), random([1, 2, 1, 1], &mut r)];
                run(inputs, |v| conv_transpose2d(&v[0], &v[1], Some(&v[2]), 2, 0))
            },
        },
        OpCheck {
            name: "batchnorm_train",
            run: |s| bn_check(s, Mode::Train),
        },
        OpCheck {
            name: "batchnorm_eval",
            run: |s| bn_check(s, Mode::Eval),
        },
        OpCheck {
            name: "linear",
            run: |s| {
                let mut r = rng(s);
                let inputs = vec![random([2, 1, 3, 4], &mut r), random([1, 1, 5, 4], &mut r), random([1, 1, 1, 5], &mut r)];
                run(inputs, |v| linear(&v[0], &v[1], &v[2]))
            },
        },
        OpCheck {
            name: "maxpool",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 4, 4], &mut r)], |v| Pool2d::new(PoolKind::Max, 2, 2).forward(&v[0]))
            },
        },
        OpCheck {
            name: "avgpool",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 4, 4], &mut r)], |v| Pool2d::new(PoolKind::Avg, 2, 2).forward(&v[0]))
            },
        },
        OpCheck {
            name: "pixel_shuffle",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 8, 2, 2], &mut r)], |v| pixel_shuffle(&v[0], 2))
            },
        },
        OpCheck {
            name: "pixel_unshuffle",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 4, 4], &mut r)], |v| pixel_unshuffle(&v[0], 2))
            },
        },
        OpCheck {
            name: "upsample_nearest",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 2, 3], &mut r)], |v| upsample_nearest(&v[0], 2))
            },
        },
        OpCheck {
            name: "upsample_bilinear",
            run: |s| {
                let mut r = rng(s);
                run(vec![random([1, 2, 3, 3], &mut r)], |v| upsample_bilinear(&v[0], 3))
            },
        },
    ]
}
