use lpca_tensor::layers::{
    pixel_shuffle, upsample_bilinear, upsample_nearest, BatchNorm2d, Conv2d, ConvTranspose2d, Mode, UpsampleMode,
};
use lpca_tensor::{join, Element, Module, Param, Result, Tensor, Var};
use rand::Rng;

use super::blocks::{batchnorm, pointwise};
use super::config::ModelConfig;

/// Resolution-restoring part of the decoder, one variant per upsampling mode.
#[derive(Clone, Debug)]
pub enum Head<T> {
    /// 1×1 conv to r² channels and one pixel shuffle.
    PixelShuffle(Conv2d<T>),
    /// Factor-4 shuffles with convs in between.
    Staged(Vec<Conv2d<T>>),
    /// 1×1 conv to one channel, then a fixed interpolation.
    Interpolate(Conv2d<T>, UpsampleMode),
    TransposedConv(ConvTranspose2d<T>),
    /// Repeated (1×1 conv to 4·C/2 channels, shuffle by 2), then a 1×1 conv.
    PatchExpand(Vec<Conv2d<T>>, Conv2d<T>),
}

/// BN → ReLU → upsampling head → sigmoid.
#[derive(Clone, Debug)]
pub struct Decoder<T> {
    pub bn: BatchNorm2d<T>,
    pub head: Head<T>,
    r: usize,
}

impl<T: Element> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(c: usize, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let r = cfg.upscale();
        let head = match cfg.upsample_mode {
            UpsampleMode::PixelShuffle => Head::PixelShuffle(pointwise(c, r * r, rng)?),
            UpsampleMode::StagedPixelShuffle => {
                let steps = r.trailing_zeros() as usize / 2;
                let mut convs = Vec::with_capacity(steps);
                let mut cin = c;
                for i in 0..steps {
                    let cout = if i + 1 == steps { 1 } else { (cin / 4).max(4) };
                    let k = if i == 0 { 1 } else { 3 };
                    convs.push(Conv2d::with_default_padding(cin, 16 * cout, (k, k), 1, rng)?);
                    cin = cout;
                }
                Head::Staged(convs)
            }
            mode @ (UpsampleMode::Nearest | UpsampleMode::Bilinear) => Head::Interpolate(pointwise(c, 1, rng)?, mode),
            UpsampleMode::TransposedConv => Head::TransposedConv(ConvTranspose2d::new(c, 1, r, r, 0, rng)?),
            UpsampleMode::PatchExpand => {
                let mut steps = Vec::new();
                let mut cin = c;
                for _ in 0..r.trailing_zeros() {
                    let cout = (cin / 2).max(1);
                    steps.push(pointwise(cin, 4 * cout, rng)?);
                    cin = cout;
                }
                Head::PatchExpand(steps, pointwise(cin, 1, rng)?)
            }
        };
        Ok(Decoder {
            bn: batchnorm(c, cfg)?,
            head,
            r,
        })
    }

    pub fn upscale(&self) -> usize {
        self.r
    }

    /// Pre-sigmoid map, (N, 1, H, W).
    pub fn logits<'t>(&self, f_down: &Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let x = self.bn.forward(f_down, mode)?.relu();
        match &self.head {
            Head::PixelShuffle(conv) => pixel_shuffle(&conv.forward(&x)?, self.r),
            Head::Staged(convs) => {
                let mut x = x;
                for (i, conv) in convs.iter().enumerate() {
                    if i > 0 {
                        x = x.relu();
                    }
                    x = pixel_shuffle(&conv.forward(&x)?, 4)?;
                }
                Ok(x)
            }
            Head::Interpolate(conv, mode) => {
                let y = conv.forward(&x)?;
                match mode {
                    UpsampleMode::Nearest => upsample_nearest(&y, self.r),
                    _ => upsample_bilinear(&y, self.r),
                }
            }
            Head::TransposedConv(deconv) => deconv.forward(&x),
            Head::PatchExpand(steps, conv) => {
                let mut x = x;
                for step in steps {
                    x = pixel_shuffle(&step.forward(&x)?, 2)?;
                }
                conv.forward(&x)
            }
        }
    }

    pub fn forward<'t>(&self, f_down: &Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        Ok(self.logits(f_down, mode)?.sigmoid())
    }
}

impl<T: Element> Head<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        match self {
            Head::PixelShuffle(c) | Head::Interpolate(c, _) => c.for_each_param(&join(prefix, "conv"), f),
            Head::Staged(cs) => cs.for_each_param(&join(prefix, "stages"), f),
            Head::TransposedConv(d) => d.for_each_param(&join(prefix, "deconv"), f),
            Head::PatchExpand(steps, c) => {
                steps.for_each_param(&join(prefix, "expand"), f);
                c.for_each_param(&join(prefix, "conv"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Head::PixelShuffle(c) | Head::Interpolate(c, _) => c.for_each_param_mut(&join(prefix, "conv"), f),
            Head::Staged(cs) => cs.for_each_param_mut(&join(prefix, "stages"), f),
            Head::TransposedConv(d) => d.for_each_param_mut(&join(prefix, "deconv"), f),
            Head::PatchExpand(steps, c) => {
                steps.for_each_param_mut(&join(prefix, "expand"), f);
                c.for_each_param_mut(&join(prefix, "conv"), f);
            }
        }
    }
}

impl<T: Element> Module<T> for Decoder<T> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        self.bn.for_each_param(&join(prefix, "bn"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.bn.for_each_param_mut(&join(prefix, "bn"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }

    fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.bn.for_each_buffer(&join(prefix, "bn"), f);
    }

    fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.bn.for_each_buffer_mut(&join(prefix, "bn"), f);
    }
}
