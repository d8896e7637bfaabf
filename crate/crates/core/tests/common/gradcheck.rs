//! Central-difference gradient checks for every layer type and for the whole
//! network.

use fabric_inspect::classifier::layers::{self, Conv2d, Dense};
use fabric_inspect::classifier::model::{init_model_with, loss_and_gradients, Architecture, ClassifierModel};
use fabric_inspect::classifier::Tensor;
use fabric_inspect::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x`.
fn check(x: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let up = f(x);
        x[i] = orig - H;
        let down = f(x);
        x[i] = orig;
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

#[derive(Debug, Default, Clone, Copy)]
pub struct LayerErrors {
    pub conv: f64,
    pub conv_strided: f64,
    pub projection: f64,
    pub dense: f64,
    pub relu: f64,
    pub pool: f64,
    pub cross_entropy: f64,
    pub model: f64,
    /// Model coordinates skipped because a rectifier changed sign inside the
    /// difference stencil.
    pub kinks_skipped: usize,
    pub model_checked: usize,
}

impl LayerErrors {
    pub fn max(&self) -> f64 {
        [
            self.conv,
            self.conv_strided,
            self.projection,
            self.dense,
            self.relu,
            self.pool,
            self.cross_entropy,
            self.model,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Loss `sum(conv(x) * r)`; checks weight, bias and input gradients.
fn conv_check(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> f64 {
    let (h, w) = (7, 6);
    let mut conv = Conv2d::zeros(cin, cout, k, stride, pad);
    conv.weight = uniform(rng, conv.weight.len(), 1.0);
    conv.bias = uniform(rng, cout, 1.0);
    let x = uniform(rng, cin * h * w, 1.0);
    let (oh, ow) = conv.output_size(h, w);
    let r = uniform(rng, cout * oh * ow, 1.0);
    let dot = |out: &[f64]| out.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();

    let (_, cache) = conv.forward(&x, h, w);
    let mut grad = Conv2d::zeros(cin, cout, k, stride, pad);
    let dx = conv.backward(&r, &cache, &mut grad);

    let mut worst = check(&mut x.clone(), &dx, |xx| dot(&conv.forward(xx, h, w).0));
    let mut weight = conv.weight.clone();
    worst = worst.max(check(&mut weight, &grad.weight, |ww| {
        let mut c = conv.clone();
        c.weight = ww.to_vec();
        dot(&c.forward(&x, h, w).0)
    }));
    let mut bias = conv.bias.clone();
    worst = worst.max(check(&mut bias, &grad.bias, |bb| {
        let mut c = conv.clone();
        c.bias = bb.to_vec();
        dot(&c.forward(&x, h, w).0)
    }));
    worst
}

fn dense_check(rng: &mut ChaCha8Rng) -> f64 {
    let mut d = Dense::zeros(5, 3);
    d.weight = uniform(rng, 15, 1.0);
    d.bias = uniform(rng, 3, 1.0);
    let x = uniform(rng, 5, 1.0);
    let r = uniform(rng, 3, 1.0);
    let dot = |y: Vec<f64>| y.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let mut grad = Dense::zeros(5, 3);
    let dx = d.backward(&x, &r, &mut grad);
    let mut worst = check(&mut x.clone(), &dx, |xx| dot(d.forward(xx)));
    worst = worst.max(check(&mut d.weight.clone(), &grad.weight, |ww| {
        let mut c = d.clone();
        c.weight = ww.to_vec();
        dot(c.forward(&x))
    }));
    worst.max(check(&mut d.bias.clone(), &grad.bias, |bb| {
        let mut c = d.clone();
        c.bias = bb.to_vec();
        dot(c.forward(&x))
    }))
}

fn relu_check(rng: &mut ChaCha8Rng) -> f64 {
    // Keep inputs well away from the kink.
    let x: Vec<f64> = uniform(rng, 20, 1.0)
        .into_iter()
        .map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
        .collect();
    let r = uniform(rng, 20, 1.0);
    let analytic = layers::relu_backward(&x, &r);
    check(&mut x.clone(), &analytic, |xx| {
        layers::relu(xx).iter().zip(&r).map(|(a, b)| a * b).sum()
    })
}

fn pool_check(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, 3 * 12, 1.0);
    let r = uniform(rng, 3, 1.0);
    let analytic = layers::global_avg_pool_backward(&r, 12);
    check(&mut x.clone(), &analytic, |xx| {
        layers::global_avg_pool(xx, 3, 12).iter().zip(&r).map(|(a, b)| a * b).sum()
    })
}

fn cross_entropy_check(rng: &mut ChaCha8Rng) -> f64 {
    let logits = uniform(rng, 2, 3.0);
    let target = rng.random_range(0..2);
    let (_, analytic) = layers::softmax_cross_entropy(&logits, target);
    check(&mut logits.clone(), &analytic, |l| layers::softmax_cross_entropy(l, target).0)
}

fn small_arch() -> Architecture {
    Architecture {
        stem_channels: 4,
        stage1_channels: 4,
        stage2_channels: 6,
        hidden: 5,
        input_side: 8,
    }
}

/// Whole-network check on a two-sample batch. Coordinates whose stencil
/// crosses a rectifier kink are skipped, since the loss is not differentiable
/// there.
fn model_check(seed: u64, errors: &mut LayerErrors) {
    let arch = small_arch();
    let model = init_model_with(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let side = arch.input_side;
    let batch: Vec<(Tensor, Label)> = (0..2)
        .map(|i| {
            let data = (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect();
            (Tensor::new(vec![1, side, side], data).unwrap(), Label::from_index(i).unwrap())
        })
        .collect();
    let (_, grads) = loss_and_gradients(&model, &batch).unwrap();
    let analytic = grads.flat_parameters();
    let pattern = |m: &ClassifierModel| -> Vec<Vec<bool>> {
        batch.iter().map(|(x, _)| m.forward_cached(x).unwrap().relu_pattern()).collect()
    };
    let base_pattern = pattern(&model);

    let mut perturbed = model.clone();
    let mut flat = 0;
    let tensor_count = model.tensors().len();
    for t in 0..tensor_count {
        let len = model.tensors()[t].len();
        for i in 0..len {
            let orig = model.tensors()[t][i];
            perturbed.tensors_mut()[t][i] = orig + H;
            let up = loss_and_gradients(&perturbed, &batch).unwrap().0;
            let up_pattern = pattern(&perturbed);
            perturbed.tensors_mut()[t][i] = orig - H;
            let down = loss_and_gradients(&perturbed, &batch).unwrap().0;
            let down_pattern = pattern(&perturbed);
            perturbed.tensors_mut()[t][i] = orig;
            if up_pattern != base_pattern || down_pattern != base_pattern {
                errors.kinks_skipped += 1;
            } else {
                errors.model = errors.model.max(rel_error(analytic[flat], (up - down) / (2.0 * H)));
                errors.model_checked += 1;
            }
            flat += 1;
        }
    }
}

pub fn run(seed: u64) -> LayerErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = LayerErrors {
        conv: conv_check(&mut rng, 2, 3, 3, 1, 1),
        conv_strided: conv_check(&mut rng, 2, 3, 3, 2, 1),
        projection: conv_check(&mut rng, 3, 2, 1, 2, 0),
        dense: dense_check(&mut rng),
        relu: relu_check(&mut rng),
        pool: pool_check(&mut rng),
        cross_entropy: cross_entropy_check(&mut rng),
        ..LayerErrors::default()
    };
    model_check(seed, &mut e);
    e
}
