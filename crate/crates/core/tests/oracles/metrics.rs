//! Independent reimplementations of the evaluation measures.

use lpca_core::metrics::EvalPair;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_pair(rng: &mut ChaCha8Rng, max_side: usize) -> EvalPair {
    let h = rng.gen_range(1..=max_side);
    let w = rng.gen_range(1..=max_side);
    let fg = rng.gen::<f64>();
    let pred: Vec<f64> = (0..h * w)
        .map(|_| match rng.gen_range(0..4) {
            // Exercise values sitting exactly on thresholds.
            0 => rng.gen_range(0..256) as f64 / 255.0,
            1 => *[0.0, 1.0].get(rng.gen_range(0..2)).unwrap(),
            _ => rng.gen::<f64>(),
        })
        .collect();
    let gt = (0..h * w).map(|_| rng.gen::<f64>() < fg).collect();
    EvalPair::new(h, w, pred, gt).unwrap()
}

pub fn counts_at(pair: &EvalPair, t: f64) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
        match (p >= t, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

pub fn brute_max_f(pair: &EvalPair) -> f64 {
    let mut best = 0.0f64;
    for k in 0..256 {
        let (tp, fp, fn_, _) = counts_at(pair, k as f64 / 255.0);
        let f = if tp == 0 {
            0.0
        } else {
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fn_) as f64;
            (1.0 + 0.3) * p * r / (0.3 * p + r)
        };
        best = best.max(f);
    }
    best
}

/// Alignment score of one binarized map, evaluated pixel by pixel.
pub fn pointwise_e(b: &[bool], g: &[bool]) -> f64 {
    let n = b.len() as f64;
    let as_f = |v: bool| if v { 1.0 } else { 0.0 };
    let gsum: f64 = g.iter().map(|&v| as_f(v)).sum();
    if gsum == 0.0 {
        return b.iter().map(|&v| 1.0 - as_f(v)).sum::<f64>() / n;
    }
    if gsum == n {
        return b.iter().map(|&v| as_f(v)).sum::<f64>() / n;
    }
    let mb = b.iter().map(|&v| as_f(v)).sum::<f64>() / n;
    let mg = gsum / n;
    let mut total = 0.0;
    for (&bv, &gv) in b.iter().zip(g) {
        let (x, y) = (as_f(bv) - mb, as_f(gv) - mg);
        let phi = 2.0 * x * y / (x * x + y * y + 1e-8);
        total += (1.0 + phi).powi(2) / 4.0;
    }
    total / n
}

/// Sweep with direct counting per threshold, scoring each binarized map by
/// the four-class closed form.
pub fn brute_max_e(pair: &EvalPair) -> f64 {
    let mut best = 0.0f64;
    for k in 0..256 {
        let (tp, fp, fn_, tn) = counts_at(pair, k as f64 / 255.0);
        let n = (tp + fp + fn_ + tn) as f64;
        let e = if tp + fn_ == 0 {
            tn as f64 / n
        } else if (tp + fn_) as f64 == n {
            tp as f64 / n
        } else {
            let mb = (tp + fp) as f64 / n;
            let mg = (tp + fn_) as f64 / n;
            let term = |b: f64, g: f64| {
                let (x, y) = (b - mb, g - mg);
                let phi = 2.0 * x * y / (x * x + y * y + 1e-8);
                (1.0 + phi) * (1.0 + phi) / 4.0
            };
            (tp as f64 * term(1.0, 1.0)
                + fp as f64 * term(1.0, 0.0)
                + fn_ as f64 * term(0.0, 1.0)
                + tn as f64 * term(0.0, 0.0))
                / n
        };
        best = best.max(e);
    }
    best
}

/// Straight-line structure measure over 2-D arrays, following the usual
/// published recipe step by step.
pub mod clean_room {
    pub fn s_alpha(p: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
        let h = g.len();
        let w = g[0].len();
        let n = (h * w) as f64;
        let gbar: f64 = g.iter().flatten().sum::<f64>() / n;
        if gbar == 0.0 {
            return 1.0 - p.iter().flatten().sum::<f64>() / n;
        }
        if gbar == 1.0 {
            return p.iter().flatten().sum::<f64>() / n;
        }
        let q = 0.5 * object(p, g, gbar) + 0.5 * region(p, g);
        if q < 0.0 { 0.0 } else { q }
    }

    fn sim(xs: &[f64]) -> f64 {
        let k = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / k;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        2.0 * m / (m * m + 1.0 + var.sqrt() + f64::EPSILON)
    }

    fn object(p: &[Vec<f64>], g: &[Vec<f64>], gbar: f64) -> f64 {
        let mut fg = vec![];
        let mut bg = vec![];
        for (pr, gr) in p.iter().zip(g) {
            for (&pv, &gv) in pr.iter().zip(gr) {
                if gv == 1.0 { fg.push(pv) } else { bg.push(1.0 - pv) }
            }
        }
        gbar * sim(&fg) + (1.0 - gbar) * sim(&bg)
    }

    fn ssim(p: &[f64], g: &[f64]) -> f64 {
        let k = p.len() as f64;
        let mx = p.iter().sum::<f64>() / k;
        let my = g.iter().sum::<f64>() / k;
        let d = if p.len() > 1 { k - 1.0 } else { 1.0 };
        let vx = p.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / d;
        let vy = g.iter().map(|v| (v - my).powi(2)).sum::<f64>() / d;
        let cxy = p.iter().zip(g).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / d;
        let num = 4.0 * mx * my * cxy;
        let den = (mx * mx + my * my) * (vx + vy);
        if num != 0.0 {
            num / (den + f64::EPSILON)
        } else if den == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn region(p: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
        let h = g.len();
        let w = g[0].len();
        let mut rows = vec![];
        let mut cols = vec![];
        for (r, gr) in g.iter().enumerate() {
            for (c, &gv) in gr.iter().enumerate() {
                if gv == 1.0 {
                    rows.push(r as f64);
                    cols.push(c as f64);
                }
            }
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let y = (avg(&rows).round_ties_even() as usize + 1).min(h);
        let x = (avg(&cols).round_ties_even() as usize + 1).min(w);
        let mut total = 0.0;
        for (rs, re, cs, ce) in [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)] {
            let area = (re.saturating_sub(rs)) * (ce.saturating_sub(cs));
            if area == 0 {
                continue;
            }
            let pb: Vec<f64> = (rs..re).flat_map(|r| (cs..ce).map(move |c| (r, c))).map(|(r, c)| p[r][c]).collect();
            let gb: Vec<f64> = (rs..re).flat_map(|r| (cs..ce).map(move |c| (r, c))).map(|(r, c)| g[r][c]).collect();
            total += area as f64 / (h * w) as f64 * ssim(&pb, &gb);
        }
        total
    }
}
