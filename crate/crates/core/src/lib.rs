//! Image containers, the synthetic degradation model, phantoms with known
//! ground truth, contrast metrics, and threshold segmentation for depth
//! contrast enhancement of volumetric fluorescence microscopy.

pub mod degrade;
pub mod error;
pub mod image;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod segment;
pub mod tiff_io;

pub use error::{Error, Result};
pub use image::{denormalize, normalize, percentile, NormalizationParams, Plane, Volume};
pub use metrics::SegmentationMask;
