//! Central finite-difference gradient checking (f64).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Module, Result, Tape, Tensor, Var};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// Flat coordinate (or `param:index`) with the largest error.
    pub worst: Option<String>,
    pub checked: usize,
    /// Coordinates where `f(x ± eps)` was not finite.
    pub non_finite: Vec<String>,
}

impl GradcheckReport {
    fn observe(&mut self, label: String, analytic: f64, plus: f64, minus: f64, eps: f64) {
        self.checked += 1;
        if !plus.is_finite() || !minus.is_finite() {
            self.non_finite.push(label);
            return;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let e = rel_err(analytic, numeric);
        if e > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(e);
            self.worst = Some(label);
        }
    }

    /// Folds another report into this one.
    pub fn merge(&mut self, other: GradcheckReport) {
        if other.max_rel_err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.non_finite.extend(other.non_finite);
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_err < tolerance
    }
}

fn scalar<'t>(v: Var<'t, f64>) -> Var<'t, f64> {
    if v.value().numel() == 1 {
        v
    } else {
        v.sum_all()
    }
}

/// Checks d f / d x at every coordinate of `x` (or `max_coords` sampled ones).
/// Non-scalar outputs of `f` are summed.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, eps: f64, max_coords: Option<usize>, seed: u64) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    gradcheck_multi(|v| f(&v[0]), std::slice::from_ref(x), eps, max_coords, seed)
}

/// Like [`gradcheck`] but for a function of several inputs; every input is
/// checked while the others are held constant.
pub fn gradcheck_multi<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = scalar(f(&vars)?);
    tape.backward(&y)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(vars);

    let eval = |ts: Vec<Tensor<f64>>| -> Result<f64> {
        let tape = Tape::no_grad();
        let vs: Vec<_> = ts.into_iter().map(|t| tape.constant(t)).collect();
        Ok(scalar(f(&vs)?).value().item())
    };
    let mut report = GradcheckReport::default();
    for (k, x) in inputs.iter().enumerate() {
        for i in pick(x.numel(), max_coords, seed.wrapping_add(k as u64)) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            let (p, m) = (eval(plus)?, eval(minus)?);
            let label = if inputs.len() == 1 {
                i.to_string()
            } else {
                format!("input{k}[{i}]")
            };
            report.observe(label, analytic[k].data()[i], p, m, eps);
        }
    }
    Ok(report)
}

/// Checks the gradients of every parameter of `module` (or a random sample of
/// `max_coords` parameter coordinates) for the scalar `f(module, tape)`.
pub fn gradcheck_params<M, F>(
    module: &mut M,
    f: F,
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradcheckReport>
where
    M: Module<f64>,
    F: for<'t> Fn(&M, &'t Tape<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let y = scalar(f(module, &tape)?);
    tape.backward(&y)?;
    let grads = tape.param_grads();

    // (name, numel, analytic gradient)
    let mut params: Vec<(String, Vec<f64>)> = Vec::new();
    module.for_each_param("", &mut |name, p| {
        let g = grads
            .get(p.id())
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; p.value().numel()]);
        params.push((name.to_string(), g));
    });
    drop(tape);
    let total: usize = params.iter().map(|(_, g)| g.len()).sum();
    let coords = pick(total, max_coords, seed);

    let mut report = GradcheckReport::default();
    for flat in coords {
        let (mut pi, mut off) = (0, flat);
        while off >= params[pi].1.len() {
            off -= params[pi].1.len();
            pi += 1;
        }
        let name = params[pi].0.clone();
        let mut values = [0.0; 2];
        let original = coord(module, &name, off, None);
        for (slot, delta) in [eps, -eps].into_iter().enumerate() {
            coord(module, &name, off, Some(original + delta));
            let tape = Tape::no_grad();
            let value = f(module, &tape).map(|v| scalar(v).value().item());
            coord(module, &name, off, Some(original));
            values[slot] = value?;
        }
        report.observe(format!("{name}[{off}]"), params[pi].1[off], values[0], values[1], eps);
    }
    Ok(report)
}

/// Reads one parameter coordinate, optionally overwriting it; returns the
/// value before the write.
fn coord<M: Module<f64>>(module: &mut M, name: &str, index: usize, set: Option<f64>) -> f64 {
    let mut old = f64::NAN;
    module.for_each_param_mut("", &mut |n, p| {
        if n == name {
            old = p.value().data()[index];
            if let Some(v) = set {
                p.value_mut().data_mut()[index] = v;
            }
        }
    });
    old
}

fn pick(total: usize, max: Option<usize>, seed: u64) -> Vec<usize> {
    match max {
        Some(k) if k < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, total, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    }
}
