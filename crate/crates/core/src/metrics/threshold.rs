//! Measures swept over the 256 binarization thresholds k/255.

use super::pair::EvalPair;

pub const THRESHOLDS: usize = 256;
/// β² of the F-measure.
pub const BETA2: f64 = 0.3;
/// Stabilizer in the E-measure alignment term.
pub const E_EPS: f64 = 1e-8;

#[inline]
pub fn threshold(k: usize) -> f64 {
    k as f64 / 255.0
}

/// Largest k with threshold(k) ≤ p, i.e. the last threshold at which the
/// pixel is still predicted positive.
fn last_positive(p: f64) -> usize {
    let mut k = ((p * 255.0).floor().max(0.0) as usize).min(THRESHOLDS - 1);
    while k + 1 < THRESHOLDS && threshold(k + 1) <= p {
        k += 1;
    }
    while k > 0 && threshold(k) > p {
        k -= 1;
    }
    k
}

/// Confusion counts at every threshold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub positives: u64,
    pub total: u64,
}

impl Confusion {
    pub fn empty() -> Self {
        Confusion {
            tp: vec![0; THRESHOLDS],
            fp: vec![0; THRESHOLDS],
            positives: 0,
            total: 0,
        }
    }

    pub fn from_pair(pair: &EvalPair) -> Self {
        // Histogram of last-positive thresholds, then suffix sums.
        let mut pos = [0u64; THRESHOLDS];
        let mut neg = [0u64; THRESHOLDS];
        for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
            let k = last_positive(p);
            if g {
                pos[k] += 1;
            } else {
                neg[k] += 1;
            }
        }
        let mut c = Confusion::empty();
        let (mut tp, mut fp) = (0, 0);
        for k in (0..THRESHOLDS).rev() {
            tp += pos[k];
            fp += neg[k];
            c.tp[k] = tp;
            c.fp[k] = fp;
        }
        c.positives = pair.gt.iter().filter(|&&g| g).count() as u64;
        c.total = pair.len() as u64;
        c
    }

    pub fn merge(&mut self, other: &Confusion) {
        for k in 0..THRESHOLDS {
            self.tp[k] += other.tp[k];
            self.fp[k] += other.fp[k];
        }
        self.positives += other.positives;
        self.total += other.total;
    }

    pub fn fn_(&self, k: usize) -> u64 {
        self.positives - self.tp[k]
    }

    pub fn tn(&self, k: usize) -> u64 {
        self.total - self.positives - self.fp[k]
    }

    /// Precision at threshold k; 1 when nothing is predicted positive.
    pub fn precision(&self, k: usize) -> f64 {
        let predicted = self.tp[k] + self.fp[k];
        if predicted == 0 {
            1.0
        } else {
            self.tp[k] as f64 / predicted as f64
        }
    }

    /// Recall at threshold k; 0 when there are no positives.
    pub fn recall(&self, k: usize) -> f64 {
        if self.positives == 0 {
            0.0
        } else {
            self.tp[k] as f64 / self.positives as f64
        }
    }

    pub fn fpr(&self, k: usize) -> f64 {
        let negatives = self.total - self.positives;
        if negatives == 0 {
            0.0
        } else {
            self.fp[k] as f64 / negatives as f64
        }
    }
}

/// F_β from confusion counts; 0 whenever precision or recall is undefined.
pub fn f_measure(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp + fp == 0 || tp + fn_ == 0 || tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    (1.0 + BETA2) * p * r / (BETA2 * p + r)
}

/// Enhanced-alignment measure of a binarized map, from its confusion
/// counts. Every pixel of one (prediction, truth) class has the same
/// alignment value, so the mean reduces to four weighted terms.
pub fn e_measure(tp: u64, fp: u64, fn_: u64, tn: u64) -> f64 {
    let n = (tp + fp + fn_ + tn) as f64;
    let gt_pos = tp + fn_;
    if gt_pos == 0 {
        return tn as f64 / n;
    }
    if gt_pos as f64 == n {
        return tp as f64 / n;
    }
    let mb = (tp + fp) as f64 / n;
    let mg = gt_pos as f64 / n;
    let enhanced = |b: f64, g: f64| {
        let (ab, ag) = (b - mb, g - mg);
        let phi = 2.0 * ab * ag / (ab * ab + ag * ag + E_EPS);
        (1.0 + phi) * (1.0 + phi) / 4.0
    };
    (tp as f64 * enhanced(1.0, 1.0)
        + fp as f64 * enhanced(1.0, 0.0)
        + fn_ as f64 * enhanced(0.0, 1.0)
        + tn as f64 * enhanced(0.0, 0.0))
        / n
}

pub fn f_curve(c: &Confusion) -> Vec<f64> {
    (0..THRESHOLDS).map(|k| f_measure(c.tp[k], c.fp[k], c.fn_(k))).collect()
}

pub fn e_curve(c: &Confusion) -> Vec<f64> {
    (0..THRESHOLDS)
        .map(|k| e_measure(c.tp[k], c.fp[k], c.fn_(k), c.tn(k)))
        .collect()
}

pub fn max_of(curve: &[f64]) -> f64 {
    curve.iter().copied().fold(0.0, f64::max)
}

pub fn max_f_measure(pair: &EvalPair) -> f64 {
    max_of(&f_curve(&Confusion::from_pair(pair)))
}

pub fn max_e_measure(pair: &EvalPair) -> f64 {
    max_of(&e_curve(&Confusion::from_pair(pair)))
}

/// Area under the pooled precision–recall curve with all-point
/// interpolation: precision is replaced by its running maximum towards
/// higher recall and integrated as a step function over recall.
pub fn average_precision(c: &Confusion) -> f64 {
    if c.positives == 0 {
        return 0.0;
    }
    // Highest threshold first, so recall is non-decreasing.
    let mut rec = vec![0.0];
    let mut prec = vec![0.0];
    for k in (0..THRESHOLDS).rev() {
        rec.push(c.recall(k));
        prec.push(c.precision(k));
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    (1..rec.len())
        .filter(|&i| rec[i] != rec[i - 1])
        .map(|i| (rec[i] - rec[i - 1]) * prec[i])
        .sum()
}

pub fn mean_average_precision(pairs: &[EvalPair]) -> f64 {
    let mut c = Confusion::empty();
    for p in pairs {
        c.merge(&Confusion::from_pair(p));
    }
    average_precision(&c)
}

/// One sampled curve point: (threshold, x, y).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Pooled PR points as (threshold, precision, recall).
pub fn pr_curve(c: &Confusion) -> Vec<CurvePoint> {
    (0..THRESHOLDS)
        .map(|k| CurvePoint {
            threshold: threshold(k),
            x: c.precision(k),
            y: c.recall(k),
        })
        .collect()
}

/// Pooled ROC points as (threshold, FPR, TPR).
pub fn roc_curve(c: &Confusion) -> Vec<CurvePoint> {
    (0..THRESHOLDS)
        .map(|k| CurvePoint {
            threshold: threshold(k),
            x: c.fpr(k),
            y: c.recall(k),
        })
        .collect()
}

/// Trapezoidal area under the ROC points, closed with (0,0) and (1,1).
pub fn roc_auc(roc: &[CurvePoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = roc.iter().map(|p| (p.x, p.y)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}
