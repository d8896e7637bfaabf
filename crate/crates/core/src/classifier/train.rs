use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_gradients, ClassifierModel, MIN_INPUT_SIDE};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::manifest::Label;

/// ChaCha stream used for shuffling; initialization uses stream 0.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub input_side: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            lr0: 0.02,
            lr_decay: 0.9,
            input_side: 96,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `lr0 = 0` is accepted so that a zero-step run can be expressed.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return Err(Error::Config(format!("lr0 must be finite and non-negative, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if self.input_side < MIN_INPUT_SIDE {
            return Err(Error::Config(format!(
                "input_side must be at least {MIN_INPUT_SIDE}, got {}",
                self.input_side
            )));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean of the per-batch losses seen during the epoch.
    pub mean_loss: f64,
    pub batch_sizes: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// `epoch,learning_rate,mean_loss` rows.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,learning_rate,mean_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.learning_rate, e.mean_loss));
        }
        out
    }
}

/// Resizes to the model input side and scales pixels to `[0, 1]`.
pub fn prepare_input(img: &GrayImage, side: usize) -> Result<Tensor> {
    if img.height() == side && img.width() == side {
        return Ok(Tensor::from_gray(img));
    }
    Ok(Tensor::from_gray(&img.resize_bilinear(side, side)?))
}

/// Plain minibatch SGD with an exponentially decaying step. Each epoch
/// reshuffles the sample order from a generator seeded with `cfg.seed`; the
/// final batch may be short.
pub fn train(
    model: &ClassifierModel,
    dataset: &[(Tensor, Label)],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    cfg.validate()?;
    if !Label::ALL.iter().all(|l| dataset.iter().any(|(_, y)| y == l)) {
        return Err(Error::SingleLabel);
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        let mut batch_sizes = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Tensor, Label)> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grad) = loss_and_gradients(&model, &batch)?;
            for (p, g) in model.tensors_mut().into_iter().zip(grad.tensors()) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
            losses.push(loss);
            batch_sizes.push(chunk.len());
        }
        report.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            batch_sizes,
        });
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::model::{init_model_with, Architecture};

    fn small_arch() -> Architecture {
        Architecture {
            input_side: 12,
            ..Architecture::default()
        }
    }

    /// Mid-gray 12x12 images carrying one 4x4 block: bright blocks are
    /// labelled defective, dark ones defect-free. Block positions and levels
    /// vary per sample.
    fn toy_set() -> Vec<(Tensor, Label)> {
        (0..8)
            .map(|i| {
                let bright = i % 2 == 0;
                let level = if bright { 255 - 3 * i as u8 } else { 3 * i as u8 };
                let mut img = GrayImage::filled(12, 12, 128).unwrap();
                let (r0, c0) = (i % 3 * 3 + 1, (i * 5) % 8);
                for r in r0..r0 + 4 {
                    for c in c0..c0 + 4 {
                        img.set(r, c, level);
                    }
                }
                let label = if bright { Label::Defective } else { Label::DefectFree };
                (Tensor::from_gray(&img), label)
            })
            .collect()
    }

    #[test]
    fn schedule_decays_per_epoch() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 0.02);
        assert!((cfg.learning_rate(1) - 0.018).abs() < 1e-15);
        assert!((cfg.learning_rate(2) - 0.0162).abs() < 1e-15);
    }

    #[test]
    fn zero_step_leaves_parameters() {
        let m = init_model_with(small_arch(), 3);
        let cfg = TrainConfig {
            lr0: 0.0,
            lr_decay: 1.0,
            epochs: 2,
            input_side: 12,
            ..TrainConfig::default()
        };
        let (trained, report) = train(&m, &toy_set(), &cfg).unwrap();
        assert_eq!(trained, m);
        assert_eq!(report.epochs.len(), 2);
    }

    /// Bright versus dark images under the default regime (40 SGD steps).
    #[test]
    fn separable_toy_set_is_learned() {
        let m = init_model_with(small_arch(), 0);
        let cfg = TrainConfig {
            input_side: 12,
            ..TrainConfig::default()
        };
        let (_, report) = train(&m, &toy_set(), &cfg).unwrap();
        let first = report.epochs[0].mean_loss;
        let last = report.final_loss().unwrap();
        assert!(last < first, "{first} -> {last}");
        assert!(last < 0.1, "final epoch loss {last}");
    }

    #[test]
    fn batches_keep_the_partial_tail() {
        let m = init_model_with(small_arch(), 2);
        let mut data = toy_set();
        data.truncate(7);
        let cfg = TrainConfig {
            epochs: 1,
            input_side: 12,
            ..TrainConfig::default()
        };
        let (_, report) = train(&m, &data, &cfg).unwrap();
        assert_eq!(report.epochs[0].batch_sizes, vec![4, 3]);
    }

    #[test]
    fn single_label_rejected() {
        let m = init_model_with(small_arch(), 2);
        let data: Vec<_> = toy_set().into_iter().filter(|(_, l)| *l == Label::Defective).collect();
        let cfg = TrainConfig {
            input_side: 12,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&m, &data, &cfg), Err(Error::SingleLabel)));
    }

    #[test]
    fn reproducible() {
        let m = init_model_with(small_arch(), 4);
        let cfg = TrainConfig {
            epochs: 3,
            input_side: 12,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&m, &toy_set(), &cfg).unwrap();
        let b = train(&m, &toy_set(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr0: -1.0, ..TrainConfig::default() },
            TrainConfig { lr_decay: 0.0, ..TrainConfig::default() },
            TrainConfig { lr_decay: 1.5, ..TrainConfig::default() },
            TrainConfig { input_side: 4, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
