use std::sync::Mutex;

use crate::module::join;
use crate::{Element, Module, Param, Result, Shape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct Running<T> {
    mean: Tensor<T>,
    var: Tensor<T>,
}

/// Per-channel batch normalization over (N, H, W).
///
/// Running statistics sit behind a mutex so a forward pass only needs `&self`;
/// a layer in train mode must still not be shared between concurrent passes.
#[derive(Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    running: Mutex<Running<T>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Clone> Clone for BatchNorm2d<T> {
    fn clone(&self) -> Self {
        BatchNorm2d {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running: Mutex::new(self.running.lock().unwrap().clone()),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

impl<T: Element> BatchNorm2d<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Result<Self> {
        Self::with_params(channels, Self::DEFAULT_MOMENTUM, Self::DEFAULT_EPS)
    }

    pub fn with_params(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        let s = Shape::new(1, channels, 1, 1)?;
        Ok(BatchNorm2d {
            gamma: Param::new(Tensor::ones(s)),
            beta: Param::new(Tensor::zeros(s)),
            running: Mutex::new(Running {
                mean: Tensor::zeros(s),
                var: Tensor::ones(s),
            }),
            momentum,
            eps,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().c
    }

    pub fn running_mean(&self) -> Tensor<T> {
        self.running.lock().unwrap().mean.clone()
    }

    pub fn running_var(&self) -> Tensor<T> {
        self.running.lock().unwrap().var.clone()
    }

    pub fn set_running(&mut self, mean: Tensor<T>, var: Tensor<T>) -> Result<()> {
        let s = self.gamma.shape();
        for t in [&mean, &var] {
            if t.shape() != s {
                return Err(TensorError::ShapeMismatch {
                    op: "set_running",
                    lhs: s,
                    rhs: t.shape(),
                });
            }
        }
        *self.running.get_mut().unwrap() = Running { mean, var };
        Ok(())
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let s = x.shape();
        let c = self.channels();
        if s.c != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                lhs: s,
                rhs: self.gamma.shape(),
            });
        }
        let m = s.n * s.plane();
        if mode == Mode::Train && m < 2 {
            return Err(TensorError::InvalidShape {
                op: "batchnorm",
                shape: s,
                reason: "train mode needs at least 2 values per channel".into(),
            });
        }
        let plane = s.plane();
        let xd = x.value().data();
        let eps = T::from_f64(self.eps);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut sum = T::zero();
                    for n in 0..s.n {
                        let off = (n * c + ch) * plane;
                        sum += xd[off..off + plane].iter().copied().sum::<T>();
                    }
                    let mu = sum / T::from_usize(m);
                    let mut sq = T::zero();
                    for n in 0..s.n {
                        let off = (n * c + ch) * plane;
                        sq += xd[off..off + plane].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                    }
                    mean[ch] = mu;
                    var[ch] = sq / T::from_usize(m);
                }
                let mom = T::from_f64(self.momentum);
                let unbias = T::from_usize(m) / T::from_usize(m - 1);
                let mut running = self.running.lock().unwrap();
                let Running { mean: rm, var: rv } = &mut *running;
                for ch in 0..c {
                    let a = &mut rm.data_mut()[ch];
                    *a = (T::one() - mom) * *a + mom * mean[ch];
                    let b = &mut rv.data_mut()[ch];
                    *b = (T::one() - mom) * *b + mom * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => {
                let running = self.running.lock().unwrap();
                (running.mean.data().to_vec(), running.var.data().to_vec())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.gamma.value().data();
        let beta = self.beta.value().data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for n in 0..s.n {
            for ch in 0..c {
                let off = (n * c + ch) * plane;
                for i in off..off + plane {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
        let tape = x.tape();
        let gv = tape.param(&self.gamma);
        let bv = tape.param(&self.beta);
        let out = Tensor::new(s, out)?;
        Ok(tape.record(&[x, &gv, &bv], out, move |ctx| {
            let g = ctx.grad().data();
            let gamma = ctx.input(1).data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for n in 0..s.n {
                for ch in 0..c {
                    let off = (n * c + ch) * plane;
                    for i in off..off + plane {
                        dbeta[ch] += g[i];
                        dgamma[ch] += g[i] * xhat[i];
                    }
                }
            }
            if ctx.wants(0) {
                let mut dx = vec![T::zero(); g.len()];
                let mf = T::from_usize(m);
                for n in 0..s.n {
                    for ch in 0..c {
                        let off = (n * c + ch) * plane;
                        let k = gamma[ch] * inv_std[ch];
                        for i in off..off + plane {
                            dx[i] = match mode {
                                Mode::Eval => g[i] * k,
                                Mode::Train => {
                                    k * (g[i] - dbeta[ch] / mf - xhat[i] * dgamma[ch] / mf)
                                }
                            };
                        }
                    }
                }
                ctx.accumulate(0, dx);
            }
            if ctx.wants(1) {
                ctx.accumulate(1, dgamma);
            }
            if ctx.wants(2) {
                ctx.accumulate(2, dbeta);
            }
        }))
    }
}

impl<T: Element> Module<T> for BatchNorm2d<T> {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        let r = self.running.lock().unwrap();
        f(&join(prefix, "running_mean"), &r.mean);
        f(&join(prefix, "running_var"), &r.var);
    }

    fn for_each_buffer_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        let r = self.running.get_mut().unwrap();
        f(&join(prefix, "running_mean"), &mut r.mean);
        f(&join(prefix, "running_var"), &mut r.var);
    }
}
