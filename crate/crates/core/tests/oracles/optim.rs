use lpca_tensor::{Module, ModuleExt, Param, Tensor};

/// A single-weight module for optimizer oracles.
pub struct Scalar(pub Param<f64>);

impl Module<f64> for Scalar {
    fn for_each_param<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<f64>)) {
        f(&lpca_tensor::join(prefix, "w"), &self.0);
    }
    fn for_each_param_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        f(&lpca_tensor::join(prefix, "w"), &mut self.0);
    }
}

impl Scalar {
    pub fn new(w: f64) -> Self {
        Scalar(Param::new(Tensor::scalar(w)))
    }
    pub fn value(&self) -> f64 {
        self.0.value().item()
    }
    pub fn set_grad(&mut self, g: f64) {
        self.zero_grad();
        self.0.accumulate_grad(&Tensor::scalar(g)).unwrap();
    }
}

/// Plain-arithmetic AdamW on one scalar.
pub fn hand_adamw(w0: f64, grads: &[f64], lr: f64, wd: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = vec![];
    for (i, &g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        w = w - lr * wd * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = v / (1.0 - b2.powi(t));
        w = w - lr * mhat / (vhat.sqrt() + eps);
        out.push(w);
    }
    out
}
