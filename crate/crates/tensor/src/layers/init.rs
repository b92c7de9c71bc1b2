use rand::Rng;

use crate::{Element, Shape, Tensor};

/// Kaiming-uniform for ReLU networks: `U(−b, b)` with `b = √(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Draws in f64 and casts, so f32 and f64 models built from one seed agree
/// up to rounding.
pub fn kaiming_uniform<T: Element, R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let b = kaiming_bound(fan_in);
    let data = (0..shape.numel())
        .map(|_| T::from_f64((2.0 * rng.gen::<f64>() - 1.0) * b))
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}
