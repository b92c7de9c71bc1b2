//! Segmentation quality measures.

mod pair;
mod report;
mod structure;
pub mod threshold;

pub use pair::{iou, mae, EvalPair};
pub use report::{ImageScores, MetricReport, IOU_THRESHOLD};
pub use structure::{s_measure, ALPHA};
pub use threshold::{
    average_precision, e_measure, f_measure, max_e_measure, max_f_measure, mean_average_precision,
    pr_curve, roc_auc, roc_curve, Confusion, CurvePoint, BETA2, THRESHOLDS,
};
