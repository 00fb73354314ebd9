//! NCC template matching with a trainable siamese convolutional preprocessor.
//!
//! The crate computes normalized cross-correlograms between template and
//! source image patches, analyzes their peaks, and trains a weight-shared
//! encoder-decoder network to widen the gap between the primary and
//! secondary correlogram peaks. A synthetic benchmark with known warp
//! fields drives evaluation: matches are taken on a triangular grid,
//! scored against ground truth, and filtered by per-match criteria.
//!
//! Modules:
//! - [`raster`]: image container, patch extraction, geometric transforms, file I/O
//! - [`ncc`]: correlogram computation (direct and FFT), peak analysis, peak gradients
//! - [`preprocess`]: Gaussian blur, difference-of-Gaussians bandpass, bandpass tuning
//! - [`convnet`]: encoder-decoder network with exact backprop and checkpointing
//! - [`trainer`]: correlation-gap training loop (similar/permuted batches, Adam)
//! - [`harness`]: synthetic stack generation, grid matching, criteria, rejection curves

pub mod convnet;
mod error;
pub mod harness;
pub mod ncc;
pub mod plane;
pub mod preprocess;
pub mod raster;
pub mod trainer;

pub use error::{Error, Result};
pub use plane::Plane;
pub use raster::{
    crop, downsample, load_f32, load_pgm, rotate90, save_f32, save_pgm, PatchSpec, Raster,
};

pub use convnet::{NetConfig, NetParams};
pub use ncc::{Correlogram, PeakAnalysis};
pub use preprocess::BandpassConfig;
pub use trainer::TrainConfig;
