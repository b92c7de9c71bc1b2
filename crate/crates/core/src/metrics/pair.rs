use crate::{Error, Result};

/// A predicted probability map and its binary ground truth, row-major H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub height: usize,
    pub width: usize,
    pub pred: Vec<f64>,
    pub gt: Vec<bool>,
}

impl EvalPair {
    pub fn new(height: usize, width: usize, pred: Vec<f64>, gt: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if n == 0 || pred.len() != n || gt.len() != n {
            return Err(Error::Data(format!(
                "evaluation pair {height}x{width} needs {n} values, got pred {} / gt {}",
                pred.len(),
                gt.len()
            )));
        }
        if let Some(bad) = pred.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("prediction value {bad} outside [0, 1]")));
        }
        Ok(EvalPair {
            height,
            width,
            pred,
            gt,
        })
    }

    /// Ground truth given as numbers; anything but 0 or 1 is rejected.
    pub fn from_values(height: usize, width: usize, pred: Vec<f64>, gt: &[f64]) -> Result<Self> {
        let gt = gt
            .iter()
            .map(|&g| match g {
                0.0 => Ok(false),
                1.0 => Ok(true),
                other => Err(Error::Data(format!("ground truth value {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, pred, gt)
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }
}

/// Mean absolute error.
pub fn mae(pair: &EvalPair) -> f64 {
    let sum: f64 = pair
        .pred
        .iter()
        .zip(&pair.gt)
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    sum / pair.len() as f64
}

/// Intersection over union of `pred ≥ threshold` with the ground truth; an
/// empty union scores 1.
pub fn iou(pair: &EvalPair, threshold: f64) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
        let b = p >= threshold;
        inter += (b && g) as usize;
        union += (b || g) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
