use lpca_tensor::layers::{BatchNorm2d, Conv2d, ConvSpec, Mode};
use lpca_tensor::{Element, Result, TensorError, Var};
use rand::Rng;

use super::blocks::{batchnorm, module_fields, pointwise};
use super::config::ModelConfig;

/// Spatial feature extractor: 1×1 reduction, parallel 1×3 / 3×1 branches,
/// and a 1×1 output conv.
#[derive(Clone, Debug)]
pub struct Sfe<T> {
    pub conv_in: Conv2d<T>,
    pub bn_in: BatchNorm2d<T>,
    pub bn_x: BatchNorm2d<T>,
    pub conv_x: Conv2d<T>,
    pub bn_y: BatchNorm2d<T>,
    pub conv_y: Conv2d<T>,
    pub bn_out: BatchNorm2d<T>,
    pub conv_out: Conv2d<T>,
}

module_fields!(Sfe {
    conv_in,
    bn_in,
    bn_x,
    conv_x,
    bn_y,
    conv_y,
    bn_out,
    conv_out
});

impl<T: Element> Sfe<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let strip = |k: (usize, usize), rng: &mut R| {
            Conv2d::new(c, c, k, ConvSpec::new(1, ConvSpec::default_padding(k, 1)), true, rng)
        };
        Ok(Sfe {
            conv_in: pointwise(c, c, rng)?,
            bn_in: batchnorm(c, cfg)?,
            bn_x: batchnorm(c, cfg)?,
            conv_x: strip((1, 3), rng)?,
            bn_y: batchnorm(c, cfg)?,
            conv_y: strip((3, 1), rng)?,
            bn_out: batchnorm(c, cfg)?,
            conv_out: pointwise(c, c, rng)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv_in.in_channels()
    }

    pub fn forward<'t>(&self, f_ca: &Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        if f_ca.shape().c != self.channels() {
            return Err(TensorError::InvalidShape {
                op: "sfe",
                shape: f_ca.shape(),
                reason: format!("expected {} channels", self.channels()),
            });
        }
        let f_in = self.bn_in.forward(&self.conv_in.forward(f_ca)?, mode)?.relu();
        let fx = self.conv_x.forward(&self.bn_x.forward(&f_in, mode)?)?;
        let fy = self.conv_y.forward(&self.bn_y.forward(&f_in, mode)?)?;
        let h = self.bn_out.forward(&fx.add(&fy)?.relu(), mode)?;
        self.conv_out.forward(&h)
    }
}
