use lpca_tensor::layers::{BatchNorm2d, Conv2d, ConvSpec, Mode};
use lpca_tensor::{Element, Result, Var};
use rand::Rng;

use super::config::ModelConfig;

/// Implements [`lpca_tensor::Module`] for a struct by visiting the listed
/// fields in order, each under its own name.
macro_rules! module_fields {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: lpca_tensor::Element> lpca_tensor::Module<T> for $ty<T> {
            fn for_each_param<'a>(
                &'a self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &'a lpca_tensor::Param<T>),
            ) {
                $( self.$field.for_each_param(&lpca_tensor::join(prefix, stringify!($field)), f); )*
            }

            fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut lpca_tensor::Param<T>)) {
                $( self.$field.for_each_param_mut(&lpca_tensor::join(prefix, stringify!($field)), f); )*
            }

            fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(&str, &lpca_tensor::Tensor<T>)) {
                $( self.$field.for_each_buffer(&lpca_tensor::join(prefix, stringify!($field)), f); )*
            }

            fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut lpca_tensor::Tensor<T>)) {
                $( self.$field.for_each_buffer_mut(&lpca_tensor::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use module_fields;

pub(crate) fn batchnorm<T: Element>(c: usize, cfg: &ModelConfig) -> Result<BatchNorm2d<T>> {
    BatchNorm2d::with_params(c, cfg.bn_momentum, cfg.bn_eps)
}

/// Bias-free convolution followed by batch norm.
#[derive(Clone, Debug)]
pub struct ConvBn<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

module_fields!(ConvBn { conv, bn });

impl<T: Element> ConvBn<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = ConvSpec {
            groups,
            ..ConvSpec::new(stride, ConvSpec::default_padding((kernel, kernel), stride))
        };
        Ok(ConvBn {
            conv: Conv2d::new(cin, cout, (kernel, kernel), spec, false, rng)?,
            bn: batchnorm(cout, cfg)?,
        })
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        self.bn.forward(&self.conv.forward(x)?, mode)
    }
}

/// A 1×1 convolution with bias.
pub(crate) fn pointwise<T: Element, R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Result<Conv2d<T>> {
    Conv2d::with_default_padding(cin, cout, (1, 1), 1, rng)
}
