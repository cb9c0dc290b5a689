//! Classification and image-similarity metrics.

mod roc;
mod ssim;

pub use roc::{auc, confusion_metrics, pr_auc, roc_curve, ConfusionMetrics, RocCurve};
pub(crate) use roc::midranks;
pub use ssim::{ssim_patchwise, ssim_patchwise_windowed, SsimResult, SsimWindow};
