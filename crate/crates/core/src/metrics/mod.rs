//! Contrast and fidelity metrics.

pub mod contrast;
pub mod mask;
pub mod report;
pub mod ssim;
pub mod stats;
pub mod wavelet;

pub use contrast::{pci, wci};
pub use mask::{iou, SegmentationMask};
pub use report::{aggregate_report, MetricsReport, MetricsRow, ReportRow};
pub use ssim::ssim;
pub use wavelet::{haar_dwt2, haar_idwt2, WaveletDecomposition};
