//! Dense recomputation of cross-modal attention without the layer code.

use lpca_core::model::Cam;
use lpca_tensor::layers::Linear;
use lpca_tensor::Tensor;

pub fn linear_parts(l: &Linear<f64>) -> (Vec<f64>, Vec<f64>, usize, usize) {
    (
        l.weight.value().data().to_vec(),
        l.bias.value().data().to_vec(),
        l.in_features(),
        l.out_features(),
    )
}

/// y[l][o] = b[o] + Σ_i W[o][i] x[l][i]
pub fn apply(x: &[Vec<f64>], l: &Linear<f64>) -> Vec<Vec<f64>> {
    let (w, b, din, dout) = linear_parts(l);
    x.iter()
        .map(|row| (0..dout).map(|o| b[o] + (0..din).map(|i| w[o * din + i] * row[i]).sum::<f64>()).collect())
        .collect()
}

/// Rows are spatial positions, columns channels.
pub fn tokens(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let s = t.shape();
    (0..s.h * s.w).map(|l| (0..s.c).map(|c| t.at(0, c, l / s.w, l % s.w)).collect()).collect()
}

/// Output tokens and attention rows (head-major, one row per query) of
/// `cam` on a single image pair, computed with plain loops.
pub fn forward(cam: &Cam<f64>, fr: &Tensor<f64>, fd: &Tensor<f64>, heads: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let q = apply(&tokens(fr), &cam.query);
    let k = apply(&tokens(fd), &cam.key);
    let v = apply(&tokens(fd), &cam.value);
    let dz = cam.head_dim();
    let l = q.len();
    let mut concat = vec![vec![0.0; heads * dz]; l];
    let mut rows = Vec::new();
    for h in 0..heads {
        for i in 0..l {
            let scores: Vec<f64> = (0..l)
                .map(|j| (0..dz).map(|d| q[i][h * dz + d] * k[j][h * dz + d]).sum::<f64>() / (dz as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let a: Vec<f64> = e.iter().map(|x| x / z).collect();
            for d in 0..dz {
                concat[i][h * dz + d] = (0..l).map(|j| a[j] * v[j][h * dz + d]).sum();
            }
            rows.push(a);
        }
    }
    (apply(&concat, &cam.output), rows)
}
