use super::pair::{iou, mae, EvalPair};
use super::structure::s_measure;
use super::threshold::{
    average_precision, e_curve, f_curve, max_of, pr_curve, roc_auc, roc_curve, Confusion,
    CurvePoint, THRESHOLDS,
};
use crate::{Error, Result};

/// Threshold for the single-operating-point IoU.
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub map: f64,
    pub mae: f64,
    pub iou: f64,
    pub max_f: f64,
    pub max_e: f64,
    pub s_measure: f64,
}

impl ImageScores {
    pub fn of(pair: &EvalPair) -> Self {
        let c = Confusion::from_pair(pair);
        ImageScores {
            map: average_precision(&c),
            mae: mae(pair),
            iou: iou(pair, IOU_THRESHOLD),
            max_f: max_of(&f_curve(&c)),
            max_e: max_of(&e_curve(&c)),
            s_measure: s_measure(pair),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.map, self.iou, self.mae, self.max_f, self.max_e, self.s_measure
        )
    }
}

/// Dataset-level summary. MAE, IoU and S_α are image means; maxF and maxE
/// are maxima of the image-mean curves; mAP and the curves pool every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub images: usize,
    pub map: f64,
    pub iou: f64,
    pub mae: f64,
    pub max_f: f64,
    pub max_e: f64,
    pub s_measure: f64,
    pub roc_auc: f64,
    pub pr_curve: Vec<CurvePoint>,
    pub roc_curve: Vec<CurvePoint>,
    pub per_image: Vec<ImageScores>,
}

impl MetricReport {
    pub fn compute(pairs: &[EvalPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("no images to evaluate".into()));
        }
        let n = pairs.len() as f64;
        let mut pooled = Confusion::empty();
        let mut f_mean = vec![0.0; THRESHOLDS];
        let mut e_mean = vec![0.0; THRESHOLDS];
        let mut per_image = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let c = Confusion::from_pair(pair);
            let (f, e) = (f_curve(&c), e_curve(&c));
            for k in 0..THRESHOLDS {
                f_mean[k] += f[k] / n;
                e_mean[k] += e[k] / n;
            }
            pooled.merge(&c);
            per_image.push(ImageScores {
                map: average_precision(&c),
                mae: mae(pair),
                iou: iou(pair, IOU_THRESHOLD),
                max_f: max_of(&f),
                max_e: max_of(&e),
                s_measure: s_measure(pair),
            });
        }
        let mean = |f: fn(&ImageScores) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        let roc = roc_curve(&pooled);
        Ok(MetricReport {
            images: pairs.len(),
            map: average_precision(&pooled),
            iou: mean(|s| s.iou),
            mae: mean(|s| s.mae),
            max_f: max_of(&f_mean),
            max_e: max_of(&e_mean),
            s_measure: mean(|s| s.s_measure),
            roc_auc: roc_auc(&roc),
            pr_curve: pr_curve(&pooled),
            roc_curve: roc,
            per_image,
        })
    }

    /// Column names matching [`MetricReport::csv_row`].
    pub const CSV_HEADER: &'static str = "mAP,IoU,MAE,maxF,maxE,S";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.map, self.iou, self.mae, self.max_f, self.max_e, self.s_measure
        )
    }
}
