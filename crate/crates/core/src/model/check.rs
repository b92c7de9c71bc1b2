use lpca_tensor::gradcheck::{gradcheck_params, GradcheckReport};
use lpca_tensor::layers::Mode;
use lpca_tensor::{Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LpcaNet, ModelConfig};
use crate::training::bce_loss;
use crate::Result;

const CALIBRATION_PASSES: usize = 40;

/// Finite-difference check of the whole tiny network in f64 with batch
/// statistics frozen (eval mode), on a BCE loss against a random mask.
/// `coords` parameter coordinates are sampled.
///
/// Running statistics are first calibrated by train-mode passes over the
/// input; with the initial identity statistics the logits are large enough
/// to reach the loss clamp, where finite differences are meaningless.
pub fn end_to_end_gradcheck(seed: u64, coords: usize, eps: f64) -> Result<GradcheckReport> {
    let cfg = ModelConfig::tiny();
    let mut net = LpcaNet::<f64>::new(&cfg, seed)?;
    let (h, w) = cfg.input_hw;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let rgb = Tensor::from_fn(Shape::new(2, 3, h, w)?, |_, _, _, _| rng.gen::<f64>());
    let depth = Tensor::from_fn(Shape::new(2, 1, h, w)?, |_, _, _, _| rng.gen::<f64>());
    let mask = Tensor::from_fn(Shape::new(2, 1, h, w)?, |_, _, _, _| f64::from(rng.gen_bool(0.3) as u8));
    for _ in 0..CALIBRATION_PASSES {
        let tape = Tape::no_grad();
        net.forward(&tape.constant(rgb.clone()), &tape.constant(depth.clone()), Mode::Train)?;
    }
    let report = gradcheck_params(
        &mut net,
        |net, tape| {
            let pred = net.forward(&tape.constant(rgb.clone()), &tape.constant(depth.clone()), Mode::Eval)?;
            bce_loss(&pred, &mask)
        },
        eps,
        Some(coords),
        seed,
    )?;
    Ok(report)
}
