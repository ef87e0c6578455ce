//! Bias-free U-Net: model, training, checkpoints and tiled iterative
//! inference.

pub mod checkpoint;
pub mod error;
pub mod infer;
pub mod layers;
pub mod optim;
pub mod real;
pub mod sampler;
pub mod tensor;
pub mod train;
pub mod unet;

pub use checkpoint::{Checkpoint, Provenance};
pub use error::{NetError, Result};
pub use infer::{enhance_iterative, enhance_plane, Enhancer, InferenceConfig};
pub use sampler::{Batch, PatchSampler};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainingHistory};
pub use unet::{ModelSpec, Unet};
