use crate::{Element, Result, Shape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Unpadded max/avg pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl Pool2d {
    pub fn new(kind: PoolKind, kernel: usize, stride: usize) -> Self {
        Pool2d {
            kind,
            kernel: (kernel, kernel),
            stride: (stride, stride),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h < self.kernel.0 || w < self.kernel.1 || self.stride.0 == 0 || self.stride.1 == 0 {
            return None;
        }
        Some((
            (h - self.kernel.0) / self.stride.0 + 1,
            (w - self.kernel.1) / self.stride.1 + 1,
        ))
    }

    pub fn forward<'t, T: Element>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (oh, ow) = self.output_hw(s.h, s.w).ok_or_else(|| TensorError::InvalidShape {
            op: "pool2d",
            shape: s,
            reason: format!("kernel {:?} larger than input", self.kernel),
        })?;
        let out_shape = Shape::new(s.n, s.c, oh, ow)?;
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let xd = x.value().data();
        let mut out = Vec::with_capacity(out_shape.numel());
        // For max pooling: flat input index that won each output (first max on ties).
        let mut argmax = Vec::new();
        let inv = T::one() / T::from_usize(kh * kw);
        for nc in 0..s.n * s.c {
            let base = nc * s.plane();
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    let mut sum = T::zero();
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let i = base + (oy * sh + ky) * s.w + ox * sw + kx;
                            let v = xd[i];
                            sum += v;
                            if v > best {
                                best = v;
                                best_i = i;
                            }
                        }
                    }
                    match self.kind {
                        PoolKind::Max => {
                            out.push(best);
                            argmax.push(best_i);
                        }
                        PoolKind::Avg => out.push(sum * inv),
                    }
                }
            }
        }
        let out = Tensor::new(out_shape, out)?;
        let pool = *self;
        Ok(x.tape().record(&[x], out, move |ctx| {
            let g = ctx.grad().data();
            let mut gx = vec![T::zero(); s.numel()];
            match pool.kind {
                PoolKind::Max => {
                    for (&i, &gv) in argmax.iter().zip(g) {
                        gx[i] += gv;
                    }
                }
                PoolKind::Avg => {
                    let mut o = 0;
                    for nc in 0..s.n * s.c {
                        let base = nc * s.plane();
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let share = g[o] * inv;
                                o += 1;
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        gx[base + (oy * sh + ky) * s.w + ox * sw + kx] += share;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            ctx.accumulate(0, gx);
        }))
    }
}
