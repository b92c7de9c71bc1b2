use rand::Rng;

use super::init::kaiming_uniform;
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::module::join;
use crate::{Element, Module, Param, Result, Shape, Tensor, TensorError, Var};

/// `y = x·Wᵀ + b` over the last axis of `(N, C, L, Din)`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    /// `(1, 1, Dout, Din)`
    pub weight: Param<T>,
    /// `(1, 1, 1, Dout)`
    pub bias: Param<T>,
}

impl<T: Element> Linear<T> {
    pub fn new<R: Rng + ?Sized>(din: usize, dout: usize, rng: &mut R) -> Result<Self> {
        Ok(Linear {
            weight: Param::new(kaiming_uniform(Shape::new(1, 1, dout, din)?, din, rng)),
            bias: Param::new(Tensor::zeros(Shape::new(1, 1, 1, dout)?)),
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape().w
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape().h
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        linear(x, &w, &b)
    }
}

/// Functional form of [`Linear`].
pub fn linear<'t, T: Element>(x: &Var<'t, T>, weight: &Var<'t, T>, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let (din, dout) = (ws.w, ws.h);
    if xs.w != din || bias.shape().numel() != dout {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            lhs: xs,
            rhs: ws,
        });
    }
    let rows = xs.n * xs.c * xs.h;
    let shape = Shape::new(xs.n, xs.c, xs.h, dout)?;
    let bd = bias.value().data();
    let mut out: Vec<T> = (0..rows).flat_map(|_| bd.iter().copied()).collect();
    gemm_nt(x.value().data(), weight.value().data(), &mut out, rows, din, dout);
    x.tape().count_macs((rows * din * dout) as u64);
    let out = Tensor::new(shape, out)?;
    Ok(x.tape().record(&[x, weight, bias], out, move |ctx| {
        let g = ctx.grad().data();
        if ctx.wants(0) {
            let mut gx = vec![T::zero(); rows * din];
            gemm_nn(g, ctx.input(1).data(), &mut gx, rows, dout, din);
            ctx.accumulate(0, gx);
        }
        if ctx.wants(1) {
            let mut gw = vec![T::zero(); dout * din];
            gemm_tn(g, ctx.input(0).data(), &mut gw, dout, rows, din);
            ctx.accumulate(1, gw);
        }
        if ctx.wants(2) {
            let mut gb = vec![T::zero(); dout];
            for row in g.chunks(dout) {
                gb.iter_mut().zip(row).for_each(|(b, &v)| *b += v);
            }
            ctx.accumulate(2, gb);
        }
    }))
}

impl<T: Element> Module<T> for Linear<T> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
