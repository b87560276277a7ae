//! Frame-quality metrics, reference predictors and evaluation reports.

mod quality;
mod report;

pub use quality::{mse, psnr, scatter_index, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    evaluate, frame_mae, linear_blend_oracle, nearest_endpoint_baseline, network_predictor,
    trivial_copy_baseline, MetricsReport, SampleMetrics, REPORT_HEADER,
};
