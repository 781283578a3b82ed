//! Test-time paths and fidelity scoring: plain and self-ensemble inference,
//! PSNR/SSIM with a per-image breakdown, and the diagnostic dump of every
//! intermediate raster in the translation chain.

mod infer;
mod metrics;

pub use infer::{
    correct_lr, dump_intermediates, infer, infer_variant, self_ensemble_infer, DUMP_NAMES,
};
pub use metrics::{metric_report, psnr, ssim, EvalMode, ImageMetrics, MetricReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Network(#[from] crate::networks::NetworkError),
}
