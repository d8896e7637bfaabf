//! Texture frequency and uniformity measurement.
//!
//! A fixed square window slides over the image on a regular grid. For each
//! block the DC bin of the amplitude spectrum is dropped, the strongest bins
//! are taken in descending order while their running sum stays within
//! `Sum / threshold_divisor`, and the block's texture frequency is the
//! amplitude-weighted mean distance of those bins from the spectrum centre.
//! The image uniformity is the trimmed mean of the block frequencies.
//! Higher scores mean finer, more regular texture.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_gray, GrayImage};
use crate::intensity::{adjust_intensity, IntensityConfig};
use crate::manifest::{natural_cmp, Label, Manifest, Sample};
use crate::spectral::{self, AmplitudeSpectrum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniformityConfig {
    pub window: usize,
    pub stride: usize,
    pub threshold_divisor: f64,
    /// Number of blocks dropped from each end before averaging.
    pub trim: usize,
}

impl Default for UniformityConfig {
    fn default() -> Self {
        Self {
            window: 360,
            stride: 120,
            threshold_divisor: 40.0,
            trim: 2,
        }
    }
}

impl UniformityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("window and stride must be positive".into()));
        }
        if !(self.threshold_divisor > 0.0) {
            return Err(Error::Config("threshold_divisor must be positive".into()));
        }
        Ok(())
    }
}

/// Top-left corners of every extraction window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub window: usize,
    pub stride: usize,
    pub origins: Vec<(usize, usize)>,
}

impl BlockGrid {
    pub fn new(height: usize, width: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Config("window and stride must be positive".into()));
        }
        if window > height.min(width) {
            return Err(Error::WindowTooLarge {
                window,
                height,
                width,
            });
        }
        let rows: Vec<usize> = (0..=height - window).step_by(stride).collect();
        let cols: Vec<usize> = (0..=width - window).step_by(stride).collect();
        let origins = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        Ok(Self {
            window,
            stride,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Blocks in row-major origin order.
pub fn extract_blocks(img: &GrayImage, cfg: &UniformityConfig) -> Result<Vec<GrayImage>> {
    let grid = BlockGrid::new(img.height(), img.width(), cfg.window, cfg.stride)?;
    grid.origins
        .iter()
        .map(|&(r, c)| img.crop(r, c, cfg.window, cfg.window))
        .collect()
}

/// Texture frequency of a single block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureFrequency {
    pub value: f64,
    /// Number of spectral points that entered the weighted mean.
    pub points: usize,
    /// Set when nothing but the DC bin carried energy.
    pub featureless: bool,
}

pub fn block_texture_frequency(block: &GrayImage, cfg: &UniformityConfig) -> TextureFrequency {
    let mut w = spectral::amplitude(&spectral::dft2(&block.to_plane()));
    w.set(0, 0, 0.0);
    texture_frequency_of(&w, cfg.threshold_divisor)
}

/// Texture frequency of an amplitude spectrum whose DC bin is already removed.
pub fn texture_frequency_of(w: &AmplitudeSpectrum, threshold_divisor: f64) -> TextureFrequency {
    let total = w.sum();
    if !(total > 0.0) {
        return TextureFrequency {
            value: 0.0,
            points: 0,
            featureless: true,
        };
    }
    let threshold = total / threshold_divisor;
    let selected = greedy_prefix(w.values(), threshold);
    let (m, n) = (w.height(), w.width());
    let (cr, cc) = ((m / 2) as f64, (n / 2) as f64);
    let mut weighted = 0.0;
    let mut mass = 0.0;
    for &i in &selected {
        let a = w.values()[i];
        let (r, c) = spectral::center_shift_coords(i / n, i % n, m, n).expect("index within spectrum");
        let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
        weighted += a * d;
        mass += a;
    }
    TextureFrequency {
        value: weighted / mass,
        points: selected.len(),
        featureless: false,
    }
}

/// Longest prefix of the descending ranking (ties by index) whose sum stays
/// within `threshold`; never shorter than one element.
fn greedy_prefix(values: &[f64], threshold: f64) -> Vec<usize> {
    let order = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    let total = values.len();
    let mut k = 64.min(total);
    loop {
        let mut idx: Vec<usize> = (0..total).collect();
        if k < total {
            idx.select_nth_unstable_by(k - 1, order);
            idx.truncate(k);
        }
        idx.sort_unstable_by(order);
        let mut sum = 0.0;
        let mut taken = 0;
        for &i in &idx {
            if sum + values[i] > threshold {
                break;
            }
            sum += values[i];
            taken += 1;
        }
        if taken < idx.len() || k == total {
            idx.truncate(taken.max(1));
            return idx;
        }
        k = (k * 4).min(total);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub frequencies: Vec<f64>,
    /// Indices of blocks that survived trimming, ascending.
    pub kept: Vec<usize>,
    pub score: f64,
}

pub fn measure_uniformity(img: &GrayImage, cfg: &UniformityConfig) -> Result<UniformityReport> {
    cfg.validate()?;
    let blocks = extract_blocks(img, cfg)?;
    if blocks.len() <= 2 * cfg.trim {
        return Err(Error::InsufficientBlocks {
            blocks: blocks.len(),
            trim: cfg.trim,
        });
    }
    let frequencies: Vec<f64> = blocks
        .par_iter()
        .map(|b| block_texture_frequency(b, cfg).value)
        .collect();
    trimmed_report(frequencies, cfg.trim)
}

/// Drops the `trim` lowest and `trim` highest frequencies (ties by block
/// index) and averages the rest.
pub fn trimmed_report(frequencies: Vec<f64>, trim: usize) -> Result<UniformityReport> {
    let n = frequencies.len();
    if n <= 2 * trim {
        return Err(Error::InsufficientBlocks { blocks: n, trim });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| frequencies[a].total_cmp(&frequencies[b]).then(a.cmp(&b)));
    let mut kept = order[trim..n - trim].to_vec();
    kept.sort_unstable();
    let score = kept.iter().map(|&i| frequencies[i]).sum::<f64>() / kept.len() as f64;
    Ok(UniformityReport {
        frequencies,
        kept,
        score,
    })
}

/// Intensity-adjusts the image, then measures its uniformity.
pub fn measure_adjusted(
    img: &GrayImage,
    intensity: &IntensityConfig,
    cfg: &UniformityConfig,
) -> Result<UniformityReport> {
    measure_uniformity(&adjust_intensity(img, intensity)?, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleUniformity {
    pub path: String,
    pub fabric_type: String,
    pub label: Label,
    pub report: UniformityReport,
}

/// Measures every sample of a manifest (loading, adjusting, measuring).
/// Output order follows the manifest.
pub fn measure_manifest(
    manifest: &Manifest,
    intensity: &IntensityConfig,
    cfg: &UniformityConfig,
) -> Result<Vec<SampleUniformity>> {
    measure_samples(manifest, &manifest.rows, intensity, cfg)
}

fn measure_samples(
    manifest: &Manifest,
    rows: &[Sample],
    intensity: &IntensityConfig,
    cfg: &UniformityConfig,
) -> Result<Vec<SampleUniformity>> {
    rows.par_iter()
        .map(|s| {
            let img = load_gray(manifest.resolve(s))?;
            Ok(SampleUniformity {
                path: s.path.clone(),
                fabric_type: s.fabric_type.clone(),
                label: s.label,
                report: measure_adjusted(&img, intensity, cfg)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub fabric_type: String,
    pub mean_score: f64,
    pub samples: usize,
}

/// Per-type mean uniformity of defect-free samples, highest first; ties by
/// type identifier ascending.
pub fn rank_types<'a>(
    types: &[String],
    scores: impl IntoIterator<Item = (&'a str, Label, f64)>,
) -> Result<Vec<TypeScore>> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (t, label, score) in scores {
        if label == Label::DefectFree {
            let e = acc.entry(t).or_insert((0.0, 0));
            e.0 += score;
            e.1 += 1;
        }
    }
    let mut ranking = Vec::with_capacity(types.len());
    for t in types {
        let &(sum, count) = acc
            .get(t.as_str())
            .ok_or_else(|| Error::NoDefectFreeSamples(t.clone()))?;
        ranking.push(TypeScore {
            fabric_type: t.clone(),
            mean_score: sum / count as f64,
            samples: count,
        });
    }
    ranking.sort_by(|a, b| {
        b.mean_score
            .total_cmp(&a.mean_score)
            .then_with(|| natural_cmp(&a.fabric_type, &b.fabric_type))
    });
    Ok(ranking)
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Manifest,
    pub test: Manifest,
    pub ranking: Vec<TypeScore>,
}

/// Puts the `n_train_types` most uniform fabric types in the training set
/// and every other type in the test set. Only defect-free samples are
/// scored; row order within each side follows the input manifest.
pub fn split_by_uniformity(
    manifest: &Manifest,
    n_train_types: usize,
    intensity: &IntensityConfig,
    cfg: &UniformityConfig,
) -> Result<Split> {
    if manifest.rows.is_empty() {
        return Err(Error::Manifest("manifest is empty".into()));
    }
    let types = manifest.fabric_types();
    if n_train_types == 0 || n_train_types >= types.len() {
        return Err(Error::Config(format!(
            "train type count must lie in [1, {}), got {n_train_types}",
            types.len()
        )));
    }
    let clean: Vec<Sample> = manifest
        .rows
        .iter()
        .filter(|s| s.label == Label::DefectFree)
        .cloned()
        .collect();
    let measured = measure_samples(manifest, &clean, intensity, cfg)?;
    let ranking = rank_types(
        &types,
        measured
            .iter()
            .map(|m| (m.fabric_type.as_str(), m.label, m.report.score)),
    )?;
    Ok(split_with_ranking(manifest, ranking, n_train_types))
}

pub fn split_with_ranking(manifest: &Manifest, ranking: Vec<TypeScore>, n_train_types: usize) -> Split {
    let train_types: Vec<&str> = ranking[..n_train_types]
        .iter()
        .map(|t| t.fabric_type.as_str())
        .collect();
    let train = manifest.filter(|s| train_types.contains(&s.fabric_type.as_str()));
    let test = manifest.filter(|s| !train_types.contains(&s.fabric_type.as_str()));
    Split {
        train,
        test,
        ranking,
    }
}
