//! Binary defect classifier: a small residual network trained from scratch
//! with softmax cross-entropy and decaying-step SGD.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use model::{init_model, init_model_with, loss_and_gradients, Architecture, ClassifierModel, Gradients, Prediction};
pub use tensor::Tensor;
pub use train::{prepare_input, train, EpochRecord, TrainConfig, TrainReport};

use crate::error::Result;
use crate::image::GrayImage;

/// Resizes `img` to the model's input side and classifies it.
pub fn predict(model: &ClassifierModel, img: &GrayImage) -> Result<Prediction> {
    let x = prepare_input(img, model.arch.input_side)?;
    model.predict_tensor(&x)
}
