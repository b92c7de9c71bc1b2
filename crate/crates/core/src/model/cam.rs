use lpca_tensor::layers::{Linear, Mode};
use lpca_tensor::{attention_probs, Element, Result, Shape, Tensor, TensorError, Var};
use rand::Rng;

use super::blocks::{module_fields, pointwise};
use lpca_tensor::layers::Conv2d;

/// Multi-head cross-attention: queries from RGB tokens, keys and values
/// from depth tokens.
#[derive(Clone, Debug)]
pub struct Cam<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    heads: usize,
}

module_fields!(Cam {
    query,
    key,
    value,
    output
});

/// (N, C, h, w) → (N, 1, h·w, C)
pub fn to_tokens<'t, T: Element>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    x.reshape(Shape::new(s.n, s.c, 1, s.h * s.w)?)?.permute([0, 2, 3, 1])
}

/// (N, 1, h·w, C) → (N, C, h, w)
pub fn from_tokens<'t, T: Element>(x: &Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    x.permute([0, 3, 1, 2])?.reshape(Shape::new(s.n, s.w, h, w)?)
}

/// (N, 1, L, heads·d) → (N, heads, L, d)
fn split_heads<'t, T: Element>(x: &Var<'t, T>, heads: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    x.reshape(Shape::new(s.n, s.h, heads, s.w / heads)?)?.permute([0, 2, 1, 3])
}

/// (N, heads, L, d) → (N, 1, L, heads·d)
fn merge_heads<'t, T: Element>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    x.permute([0, 2, 1, 3])?.reshape(Shape::new(s.n, 1, s.h, s.c * s.w)?)
}

impl<T: Element> Cam<T> {
    pub fn new<R: Rng + ?Sized>(c_rgb: usize, c_depth: usize, c: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            return Err(TensorError::Config(format!(
                "attention width {c} not divisible by {heads} heads"
            )));
        }
        Ok(Cam {
            query: Linear::new(c_rgb, c, rng)?,
            key: Linear::new(c_depth, c, rng)?,
            value: Linear::new(c_depth, c, rng)?,
            output: Linear::new(c, c, rng)?,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.output.in_features() / self.heads
    }

    fn check<'t>(f_rgb: &Var<'t, T>, f_depth: &Var<'t, T>) -> Result<()> {
        let (a, b) = (f_rgb.shape(), f_depth.shape());
        if a.n != b.n || a.h != b.h || a.w != b.w {
            return Err(TensorError::ShapeMismatch {
                op: "cross-attention",
                lhs: a,
                rhs: b,
            });
        }
        Ok(())
    }

    /// Multi-head attention output before the output projection,
    /// (N, 1, L, C).
    pub fn attend<'t>(&self, f_rgb: &Var<'t, T>, f_depth: &Var<'t, T>) -> Result<Var<'t, T>> {
        Self::check(f_rgb, f_depth)?;
        let q = split_heads(&self.query.forward(&to_tokens(f_rgb)?)?, self.heads)?;
        let kv = to_tokens(f_depth)?;
        let k = split_heads(&self.key.forward(&kv)?, self.heads)?;
        let v = split_heads(&self.value.forward(&kv)?, self.heads)?;
        let scale = T::from_f64(1.0 / (self.head_dim() as f64).sqrt());
        merge_heads(&q.attention(&k, &v, scale)?)
    }

    pub fn forward<'t>(&self, f_rgb: &Var<'t, T>, f_depth: &Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f_rgb.shape();
        from_tokens(&self.output.forward(&self.attend(f_rgb, f_depth)?)?, s.h, s.w)
    }

    /// Attention weights, (N, heads, L, L), computed without recording.
    pub fn attention_weights<'t>(&self, f_rgb: &Var<'t, T>, f_depth: &Var<'t, T>) -> Result<Tensor<T>> {
        Self::check(f_rgb, f_depth)?;
        let q = split_heads(&self.query.forward(&to_tokens(f_rgb)?)?, self.heads)?;
        let k = split_heads(&self.key.forward(&to_tokens(f_depth)?)?, self.heads)?;
        attention_probs(q.value(), k.value(), T::from_f64(1.0 / (self.head_dim() as f64).sqrt()))
    }
}

/// Stage fusion of RGB and depth features: cross-attention, or for the
/// no-CAM ablation a 1×1 conv over the channel concatenation.
#[derive(Clone, Debug)]
pub enum StageFusion<T> {
    Cam(Cam<T>),
    Concat(Conv2d<T>),
}

impl<T: Element> StageFusion<T> {
    pub fn new<R: Rng + ?Sized>(
        use_cam: bool,
        c_rgb: usize,
        c_depth: usize,
        c: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(if use_cam {
            StageFusion::Cam(Cam::new(c_rgb, c_depth, c, heads, rng)?)
        } else {
            StageFusion::Concat(pointwise(c_rgb + c_depth, c, rng)?)
        })
    }

    pub fn forward<'t>(&self, f_rgb: &Var<'t, T>, f_depth: &Var<'t, T>, _mode: Mode) -> Result<Var<'t, T>> {
        match self {
            StageFusion::Cam(cam) => cam.forward(f_rgb, f_depth),
            StageFusion::Concat(conv) => conv.forward(&f_rgb.concat_channels(f_depth)?),
        }
    }
}

impl<T: Element> lpca_tensor::Module<T> for StageFusion<T> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a lpca_tensor::Param<T>)) {
        match self {
            StageFusion::Cam(m) => m.for_each_param(&lpca_tensor::join(prefix, "cam"), f),
            StageFusion::Concat(m) => m.for_each_param(&lpca_tensor::join(prefix, "concat"), f),
        }
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut lpca_tensor::Param<T>)) {
        match self {
            StageFusion::Cam(m) => m.for_each_param_mut(&lpca_tensor::join(prefix, "cam"), f),
            StageFusion::Concat(m) => m.for_each_param_mut(&lpca_tensor::join(prefix, "concat"), f),
        }
    }
}
