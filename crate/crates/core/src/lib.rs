//! Tactile fabric inspection.
//!
//! Images are flattened to gray, their dominant low-frequency energy is
//! stripped in the Fourier domain and the result is stretched and normalized
//! to a fixed mean. A per-image texture uniformity score ranks fabric types
//! for training-set selection, and an odd-sized ensemble of small residual
//! classifiers votes on each sample.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod ensemble;
pub mod error;
pub mod image;
pub mod intensity;
pub mod manifest;
pub mod spectral;
pub mod synthfab;
pub mod uniformity;

pub use classifier::{predict, Architecture, ClassifierModel, Prediction, Tensor, TrainConfig};
pub use ensemble::{Ensemble, EnsembleConfig, Verdict};
pub use error::{Error, Result};
pub use image::{GrayImage, RealPlane, RgbImage};
pub use intensity::{adjust_intensity, IntensityConfig};
pub use manifest::{Label, Manifest, Sample};
pub use uniformity::{measure_uniformity, UniformityConfig, UniformityReport};
