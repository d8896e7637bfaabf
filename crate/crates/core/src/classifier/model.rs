//! Compact residual network: a 3x3 stem, two residual blocks (the second
//! halves the resolution and widens through a 1x1 projection skip), global
//! average pooling and a two-layer dense head.
//!
//! The forward pass first standardizes its input to zero mean and unit
//! variance. Adjusted images all share one mean intensity, so without this
//! every channel starts out dominated by the same constant and plain SGD at
//! the training rates stalls on a plateau.

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, Conv2d, ConvCache, Dense};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::manifest::Label;

pub const CLASSES: usize = 2;
pub const MIN_INPUT_SIDE: usize = 8;

/// Channel widths and input resolution of a [`ClassifierModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub stem_channels: usize,
    pub stage1_channels: usize,
    pub stage2_channels: usize,
    pub hidden: usize,
    /// Side length images are resized to before the forward pass.
    pub input_side: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            stem_channels: 8,
            stage1_channels: 8,
            stage2_channels: 16,
            hidden: 32,
            input_side: 96,
        }
    }
}

/// `relu(conv2(relu(conv1(x))) + skip(x))`
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    /// 1x1 projection; `None` means an identity skip.
    pub projection: Option<Conv2d>,
}

struct BlockCache {
    c1: ConvCache,
    pre1: Vec<f64>,
    c2: ConvCache,
    proj: Option<ConvCache>,
    pre_out: Vec<f64>,
}

impl ResidualBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let projection = (in_ch != out_ch || stride != 1).then(|| Conv2d::zeros(in_ch, out_ch, 1, stride, 0));
        Self {
            conv1: Conv2d::zeros(in_ch, out_ch, 3, stride, 1),
            conv2: Conv2d::zeros(out_ch, out_ch, 3, 1, 1),
            projection,
        }
    }

    fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize, BlockCache) {
        let (pre1, c1) = self.conv1.forward(x, h, w);
        let (oh, ow) = self.conv1.output_size(h, w);
        let act1 = layers::relu(&pre1);
        let (mut pre_out, c2) = self.conv2.forward(&act1, oh, ow);
        let proj = match &self.projection {
            Some(p) => {
                let (skip, cache) = p.forward(x, h, w);
                pre_out.iter_mut().zip(&skip).for_each(|(a, s)| *a += s);
                Some(cache)
            }
            None => {
                pre_out.iter_mut().zip(x).for_each(|(a, s)| *a += s);
                None
            }
        };
        let out = layers::relu(&pre_out);
        (
            out,
            oh,
            ow,
            BlockCache {
                c1,
                pre1,
                c2,
                proj,
                pre_out,
            },
        )
    }

    fn backward(&self, dout: &[f64], cache: &BlockCache, grad: &mut ResidualBlock) -> Vec<f64> {
        let dz = layers::relu_backward(&cache.pre_out, dout);
        let dact1 = self.conv2.backward(&dz, &cache.c2, &mut grad.conv2);
        let dpre1 = layers::relu_backward(&cache.pre1, &dact1);
        let mut dx = self.conv1.backward(&dpre1, &cache.c1, &mut grad.conv1);
        match (&self.projection, &cache.proj, grad.projection.as_mut()) {
            (Some(p), Some(pc), Some(pg)) => {
                let dskip = p.backward(&dz, pc, pg);
                dx.iter_mut().zip(&dskip).for_each(|(a, s)| *a += s);
            }
            _ => dx.iter_mut().zip(&dz).for_each(|(a, s)| *a += s),
        }
        dx
    }

    fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        [&self.conv1, &self.conv2].into_iter().chain(self.projection.as_ref())
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        [&mut self.conv1, &mut self.conv2].into_iter().chain(self.projection.as_mut())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub arch: Architecture,
    pub seed: u64,
    pub stem: Conv2d,
    pub stage1: ResidualBlock,
    pub stage2: ResidualBlock,
    pub hidden: Dense,
    pub output: Dense,
}

/// Intermediate values of one forward pass.
pub struct ForwardCache {
    in_h: usize,
    in_w: usize,
    stem: ConvCache,
    stem_pre: Vec<f64>,
    stage1: BlockCache,
    stage2: BlockCache,
    stage2_plane: usize,
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    /// Sign pattern of every rectifier input. Two passes with equal patterns
    /// evaluate the same piecewise-linear branch of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        [
            &self.stem_pre,
            &self.stage1.pre1,
            &self.stage1.pre_out,
            &self.stage2.pre1,
            &self.stage2.pre_out,
            &self.hidden_pre,
        ]
        .into_iter()
        .flat_map(|v| v.iter().map(|&x| x > 0.0))
        .collect()
    }
}

impl ClassifierModel {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture, seed: u64) -> Self {
        Self {
            arch,
            seed,
            stem: Conv2d::zeros(1, arch.stem_channels, 3, 1, 1),
            stage1: ResidualBlock::new(arch.stem_channels, arch.stage1_channels, 1),
            stage2: ResidualBlock::new(arch.stage1_channels, arch.stage2_channels, 2),
            hidden: Dense::zeros(arch.stage2_channels, arch.hidden),
            output: Dense::zeros(arch.hidden, CLASSES),
        }
    }

    /// Parameter vectors in checkpoint order: every convolution (weight,
    /// bias) from input to output, then the two dense layers.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for conv in std::iter::once(&self.stem)
            .chain(self.stage1.convs())
            .chain(self.stage2.convs())
        {
            out.push(&conv.weight);
            out.push(&conv.bias);
        }
        for d in [&self.hidden, &self.output] {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for conv in std::iter::once(&mut self.stem)
            .chain(self.stage1.convs_mut())
            .chain(self.stage2.convs_mut())
        {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
        }
        for d in [&mut self.hidden, &mut self.output] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    /// Fan-in of the layer owning each tensor from [`Self::tensors`], with
    /// `None` for bias vectors.
    fn fan_ins(&self) -> Vec<Option<usize>> {
        let mut out = Vec::new();
        for conv in std::iter::once(&self.stem)
            .chain(self.stage1.convs())
            .chain(self.stage2.convs())
        {
            out.push(Some(conv.fan_in()));
            out.push(None);
        }
        for d in [&self.hidden, &self.output] {
            out.push(Some(d.inputs));
            out.push(None);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let cache = self.forward_cached(x)?;
        Tensor::new(vec![CLASSES], cache.logits)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<ForwardCache> {
        let (h, w) = match x.shape() {
            [1, h, w] if *h >= MIN_INPUT_SIDE && *w >= MIN_INPUT_SIDE => (*h, *w),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "expected [1, S, S] input with S >= {MIN_INPUT_SIDE}, got {other:?}"
                )))
            }
        };
        let input = standardize(x.data());
        let (stem_pre, stem) = self.stem.forward(&input, h, w);
        let act = layers::relu(&stem_pre);
        let (a1, h1, w1, stage1) = self.stage1.forward(&act, h, w);
        let (a2, h2, w2, stage2) = self.stage2.forward(&a1, h1, w1);
        let plane = h2 * w2;
        let pooled = layers::global_avg_pool(&a2, self.arch.stage2_channels, plane);
        let hidden_pre = self.hidden.forward(&pooled);
        let hidden_act = layers::relu(&hidden_pre);
        let logits = self.output.forward(&hidden_act);
        Ok(ForwardCache {
            in_h: h,
            in_w: w,
            stem,
            stem_pre,
            stage1,
            stage2,
            stage2_plane: plane,
            pooled,
            hidden_pre,
            hidden_act,
            logits,
        })
    }

    /// Backpropagates `dlogits` through the cached pass, accumulating into
    /// `grad`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grad: &mut ClassifierModel) {
        let dhidden_act = self.output.backward(&cache.hidden_act, dlogits, &mut grad.output);
        let dhidden_pre = layers::relu_backward(&cache.hidden_pre, &dhidden_act);
        let dpooled = self.hidden.backward(&cache.pooled, &dhidden_pre, &mut grad.hidden);
        let da2 = layers::global_avg_pool_backward(&dpooled, cache.stage2_plane);
        let da1 = self.stage2.backward(&da2, &cache.stage2, &mut grad.stage2);
        let dact = self.stage1.backward(&da1, &cache.stage1, &mut grad.stage1);
        let dstem = layers::relu_backward(&cache.stem_pre, &dact);
        debug_assert_eq!(dstem.len(), self.arch.stem_channels * cache.in_h * cache.in_w);
        // Input gradient is not needed.
        let _ = self.stem.backward(&dstem, &cache.stem, &mut grad.stem);
    }

    pub fn predict_tensor(&self, x: &Tensor) -> Result<Prediction> {
        let logits = self.forward(x)?.into_data();
        Ok(Prediction::from_logits([logits[0], logits[1]]))
    }
}

/// Per-sample standardization `(x - mean) / max(sd, 1 / sqrt(n))`. The floor
/// keeps flat inputs finite: a constant image maps to all zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = var.sqrt().max(n.sqrt().recip());
    x.iter().map(|v| (v - mean) / scale).collect()
}

/// Rectifier-scaled random initialization: weights from `N(0, 2 / fan_in)`,
/// biases zero. The stream comes from ChaCha8 seeded with `seed`.
pub fn init_model(seed: u64) -> ClassifierModel {
    init_model_with(Architecture::default(), seed)
}

pub fn init_model_with(arch: Architecture, seed: u64) -> ClassifierModel {
    let mut model = ClassifierModel::zeros(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_ins = model.fan_ins();
    for (tensor, fan_in) in model.tensors_mut().into_iter().zip(fan_ins) {
        if let Some(fan_in) = fan_in {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            tensor.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
    }
    model
}

/// Gradients share the model's layout.
pub type Gradients = ClassifierModel;

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_gradients(model: &ClassifierModel, batch: &[(Tensor, Label)]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let per_sample: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|(x, label)| {
            let cache = model.forward_cached(x)?;
            let (loss, mut dlogits) = layers::softmax_cross_entropy(&cache.logits, label.index());
            dlogits.iter_mut().for_each(|g| *g *= scale);
            let mut grad = ClassifierModel::zeros(model.arch, model.seed);
            model.backward(&cache, &dlogits, &mut grad);
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut total = ClassifierModel::zeros(model.arch, model.seed);
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        for (acc, part) in total.tensors_mut().into_iter().zip(g.tensors()) {
            acc.iter_mut().zip(part).for_each(|(a, p)| *a += p);
        }
    }
    Ok((loss * scale, total))
}

/// Class scores and the decided label. Index 0 is defect-free; exact ties
/// resolve to defective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub label: Label,
}

impl Prediction {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let label = if logits[1] >= logits[0] {
            Label::Defective
        } else {
            Label::DefectFree
        };
        Self { logits, label }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(side: usize, seed: u64) -> Tensor {
        let mut s = seed | 1;
        let data = (0..side * side)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s % 1000) as f64 / 1000.0
            })
            .collect();
        Tensor::new(vec![1, side, side], data).unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(init_model(7), init_model(7));
        assert_ne!(init_model(7).flat_parameters(), init_model(8).flat_parameters());
    }

    #[test]
    fn stem_weight_variance_matches_fan_in() {
        let samples: Vec<f64> = (0..200).flat_map(|seed| init_model(seed).stem.weight).collect();
        assert_eq!(samples.len(), 200 * 72);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / samples.len() as f64;
        let want = 2.0 / 9.0;
        assert!((var - want).abs() <= 0.2 * want, "variance {var}");
    }

    #[test]
    fn biases_start_at_zero() {
        let m = init_model(3);
        for (t, fan) in m.tensors().iter().zip(m.fan_ins()) {
            if fan.is_none() {
                assert!(t.iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn standardize_centers_and_scales() {
        let z = standardize(&[1.0, 3.0, 5.0, 7.0]);
        let sd = 5f64.sqrt();
        let want = [-3.0 / sd, -1.0 / sd, 1.0 / sd, 3.0 / sd];
        for (a, b) in z.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(standardize(&[0.4; 9]).iter().all(|v| v.abs() < 1e-12));
        // Affine changes of the input do not reach the network.
        let x = input(10, 2);
        let shifted = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| 0.5 * v + 0.2).collect()).unwrap();
        let m = init_model(5);
        let (a, b) = (m.forward(&x).unwrap(), m.forward(&shifted).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let m = ClassifierModel::zeros(Architecture::default(), 0);
        let out = m.forward(&input(12, 1)).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn zeroed_stage1_passes_identity() {
        let mut m = init_model(11);
        m.stage1.conv1.weight.fill(0.0);
        m.stage1.conv2.weight.fill(0.0);
        let x = input(10, 5);
        let cache = m.forward_cached(&x).unwrap();
        let stem_act = layers::relu(&cache.stem_pre);
        assert_eq!(cache.stage1.pre_out, stem_act);
        assert_eq!(layers::relu(&cache.stage1.pre_out), stem_act);
    }

    #[test]
    fn doubling_output_layer_doubles_logits() {
        let m = init_model(4);
        let x = input(16, 9);
        let base = m.forward(&x).unwrap();
        let mut doubled = m.clone();
        doubled.output.weight.iter_mut().for_each(|w| *w *= 2.0);
        let out = doubled.forward(&x).unwrap();
        for (a, b) in base.data().iter().zip(out.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = init_model(1);
        assert!(m.forward(&Tensor::zeros(vec![1, 4, 4])).is_err());
        assert!(m.forward(&Tensor::zeros(vec![2, 16, 16])).is_err());
    }

    #[test]
    fn equal_logits_loss_is_ln2_and_duplicates_average() {
        let m = ClassifierModel::zeros(Architecture::default(), 0);
        let x = input(8, 2);
        let (loss, _) = loss_and_gradients(&m, &[(x.clone(), Label::Defective)]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let m = init_model(5);
        let (single, g1) = loss_and_gradients(&m, &[(x.clone(), Label::DefectFree)]).unwrap();
        let (double, g2) =
            loss_and_gradients(&m, &[(x.clone(), Label::DefectFree), (x, Label::DefectFree)]).unwrap();
        assert!((single - double).abs() < 1e-15);
        for (a, b) in g1.flat_parameters().iter().zip(g2.flat_parameters()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn prediction_tie_break() {
        assert_eq!(Prediction::from_logits([2.0, -1.0]).label, Label::DefectFree);
        assert_eq!(Prediction::from_logits([0.5, 0.5]).label, Label::Defective);
        assert_eq!(Prediction::from_logits([-3.0, 1.0]).label, Label::Defective);
    }

    #[test]
    fn parameter_layout() {
        let m = init_model(0);
        // stem 72+8, stage1 2*(576+8), stage2 1152+16 + 2304+16 + 128+16, head 512+32 + 64+2
        assert_eq!(m.parameter_count(), 80 + 1168 + 3632 + 544 + 66);
        assert_eq!(m.tensors().len(), 16);
    }
}
