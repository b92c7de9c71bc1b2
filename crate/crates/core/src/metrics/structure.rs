//! Structure measure: a blend of object-aware and region-aware similarity.

use super::pair::EvalPair;

pub const ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

/// S_α of a prediction against its ground truth, clamped below at 0.
pub fn s_measure(pair: &EvalPair) -> f64 {
    let n = pair.len() as f64;
    let fg = pair.gt.iter().filter(|&&g| g).count();
    let mean_pred = pair.pred.iter().sum::<f64>() / n;
    if fg == 0 {
        return 1.0 - mean_pred;
    }
    if fg == pair.len() {
        return mean_pred;
    }
    let s = ALPHA * object_score(pair) + (1.0 - ALPHA) * region_score(pair);
    s.max(0.0)
}

/// Mean and sample standard deviation; a single value has zero spread.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0).max(1.0)).sqrt())
}

fn object_similarity(values: &[f64]) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn object_score(pair: &EvalPair) -> f64 {
    let fg: Vec<f64> = pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / pair.len() as f64;
    u * object_similarity(&fg) + (1.0 - u) * object_similarity(&bg)
}

/// Split point from the rounded foreground centroid, shifted by one so the
/// centroid row and column land in the top-left block.
fn centroid(pair: &EvalPair) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
    for r in 0..pair.height {
        for c in 0..pair.width {
            if pair.gt[r * pair.width + c] {
                sy += r as f64;
                sx += c as f64;
                n += 1.0;
            }
        }
    }
    let y = (sy / n).round_ties_even() as usize + 1;
    let x = (sx / n).round_ties_even() as usize + 1;
    (y.min(pair.height), x.min(pair.width))
}

fn block_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let denom = (n - 1.0).max(1.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        sxx += (p - x) * (p - x);
        syy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(pair: &EvalPair) -> f64 {
    let (h, w) = (pair.height, pair.width);
    let (cy, cx) = centroid(pair);
    let area = (h * w) as f64;
    let blocks = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let mut score = 0.0;
    for (r0, r1, c0, c1) in blocks {
        if r1 <= r0 || c1 <= c0 {
            continue;
        }
        let mut p = Vec::with_capacity((r1 - r0) * (c1 - c0));
        let mut g = Vec::with_capacity(p.capacity());
        for r in r0..r1 {
            for c in c0..c1 {
                p.push(pair.pred[r * w + c]);
                g.push(if pair.gt[r * w + c] { 1.0 } else { 0.0 });
            }
        }
        let weight = ((r1 - r0) * (c1 - c0)) as f64 / area;
        score += weight * block_ssim(&p, &g);
    }
    score
}
