use lpca_tensor::{Element, Module, Tensor};

use crate::{Error, Result};

/// Hyperparameters of decoupled-weight-decay Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// AdamW state: first and second moments per parameter (in traversal
/// order) and the step count.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every parameter that
    /// holds a gradient. Nothing is modified if any gradient is non-finite.
    pub fn step<T: Element, M: Module<T> + ?Sized>(&mut self, module: &mut M, lr: f64) -> Result<()> {
        let mut bad = None;
        module.for_each_param("", &mut |name, p| {
            if bad.is_none() && p.grad().is_some_and(|g| !g.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::Numeric(format!("non-finite gradient in {name}; step rejected")));
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        let mut slot = 0;
        let moments = &mut self.moments;
        module.for_each_param_mut("", &mut |_, p| {
            let idx = slot;
            slot += 1;
            if moments.len() <= idx {
                let n = p.value().numel();
                moments.push((vec![0.0; n], vec![0.0; n]));
            }
            if !p.requires_grad {
                return;
            }
            let Some(g) = p.grad().map(Tensor::data).map(|g| g.iter().map(|&v| v.to_f64()).collect::<Vec<_>>()) else {
                return;
            };
            let (m, v) = &mut moments[idx];
            for (((w, g), m), v) in p.value_mut().data_mut().iter_mut().zip(g).zip(m).zip(v) {
                let mut x = w.to_f64();
                x -= lr * c.weight_decay * x;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                x -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                *w = T::from_f64(x);
            }
        });
        Ok(())
    }
}

/// Cosine annealing from `lr_base` at step 0 to `lr_min` at `total_steps`;
/// later steps stay at `lr_min`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_base: f64, lr_min: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return lr_min;
    }
    let frac = step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_base - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}
