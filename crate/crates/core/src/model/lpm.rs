use lpca_tensor::layers::{Conv2d, Mode, Pool2d};
use lpca_tensor::{Element, Result, TensorError, Var};
use rand::Rng;

use super::blocks::{module_fields, ConvBn};
use super::config::{ModelConfig, STAGES};

/// One pyramid stage: an entry layer (4×4/s4 projection for stage 1,
/// pooling otherwise) and two conv3×3 + BN + ReLU layers.
#[derive(Clone, Debug)]
pub struct LpmStage<T> {
    pub proj: Option<Conv2d<T>>,
    pub layers: Vec<ConvBn<T>>,
}

module_fields!(LpmStage { proj, layers });

/// Lightweight pyramid encoder for the depth stream.
#[derive(Clone, Debug)]
pub struct Lpm<T> {
    pub stages: Vec<LpmStage<T>>,
    pool: Pool2d,
}

module_fields!(Lpm { stages });

impl<T: Element> Lpm<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let widths = cfg.depth_channels;
        let mut stages = Vec::with_capacity(STAGES);
        let mut cin = 1;
        for (i, &c) in widths.iter().enumerate() {
            let proj = if i == 0 {
                let p = Conv2d::with_default_padding(1, c, (4, 4), 4, rng)?;
                cin = c;
                Some(p)
            } else {
                None
            };
            let layers = vec![
                ConvBn::new(cin, c, 3, 1, 1, cfg, rng)?,
                ConvBn::new(c, c, 3, 1, 1, cfg, rng)?,
            ];
            cin = c;
            stages.push(LpmStage { proj, layers });
        }
        Ok(Lpm {
            stages,
            pool: Pool2d::new(cfg.pool_kind, 2, 2),
        })
    }

    pub fn forward<'t>(&self, depth: &Var<'t, T>, mode: Mode) -> Result<Vec<Var<'t, T>>> {
        if depth.shape().c != 1 {
            return Err(TensorError::InvalidShape {
                op: "lpm",
                shape: depth.shape(),
                reason: "expected a single depth channel".into(),
            });
        }
        let mut out: Vec<Var<'t, T>> = Vec::with_capacity(STAGES);
        for stage in &self.stages {
            let mut x = match (&stage.proj, out.last()) {
                (Some(p), _) => p.forward(depth)?,
                (None, Some(prev)) => self.pool.forward(prev)?,
                (None, None) => unreachable!("only the first stage lacks a predecessor"),
            };
            for layer in &stage.layers {
                x = layer.forward(&x, mode)?.relu();
            }
            out.push(x);
        }
        Ok(out)
    }
}
