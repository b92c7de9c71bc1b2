use lpca_tensor::{Element, Result, Tensor, TensorError, Var};

/// Probabilities are clamped to [CLAMP, 1 − CLAMP] before taking logs.
pub const CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy between predicted probabilities and a binary
/// target. Pixels outside the clamp range receive zero gradient.
pub fn bce_loss<'t, T: Element>(pred: &Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "bce_loss",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    if let Some(bad) = target.data().iter().map(|&t| t.to_f64()).find(|&t| t.abs() > 1e-6 && (t - 1.0).abs() > 1e-6) {
        return Err(TensorError::Config(format!("bce_loss target value {bad} is not in {{0, 1}}")));
    }
    let p = pred.value().data();
    if let Some(i) = p.iter().position(|&q| !q.to_f64().is_finite()) {
        return Err(TensorError::NonFinite {
            op: "bce_loss",
            what: format!("prediction at index {i}"),
        });
    }
    let n = p.len() as f64;
    let total: f64 = p
        .iter()
        .zip(target.data())
        .map(|(&q, &t)| pixel_bce(q.to_f64(), t.to_f64()))
        .sum();
    let target = target.clone();
    Ok(pred.tape().record(&[pred], Tensor::scalar(T::from_f64(total / n)), move |ctx| {
        let g = ctx.grad().item().to_f64() / n;
        let grad = ctx
            .input(0)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&q, &t)| {
                let (q, t) = (q.to_f64(), t.to_f64());
                if q < CLAMP || q > 1.0 - CLAMP {
                    T::zero()
                } else {
                    T::from_f64(g * (q - t) / (q * (1.0 - q)))
                }
            })
            .collect();
        ctx.accumulate(0, grad);
    }))
}

/// Per-pixel cross-entropy with the clamp applied.
pub fn pixel_bce(q: f64, t: f64) -> f64 {
    let q = q.clamp(CLAMP, 1.0 - CLAMP);
    -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
}
