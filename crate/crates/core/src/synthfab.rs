//! Procedural tactile fabric images: product-of-sines weaves with smoothed
//! noise, a radial pressing gradient, and injected structural defects.
//!
//! Row index `x` runs over the `M` rows and column index `y` over the `N`
//! columns, so a weave with `freq_x = a`, `freq_y = b` puts its spectral
//! peaks at `(±a, ±b)`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, save_image, GrayImage};
use crate::manifest::{Label, Manifest, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeaveParams {
    /// Cycles per image height.
    pub freq_x: f64,
    /// Cycles per image width.
    pub freq_y: f64,
    pub amplitude: f64,
    pub base: f64,
    pub noise_sigma: f64,
    /// Box kernel side used to smooth the noise; 0 leaves it white.
    #[serde(default)]
    pub blob_scale: usize,
    #[serde(default)]
    pub seed: u64,
}

impl WeaveParams {
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        for (f, side, name) in [(self.freq_x, m, "freq_x"), (self.freq_y, n, "freq_y")] {
            if !(f > 0.0 && f < side as f64 / 2.0) {
                return Err(Error::Config(format!(
                    "{name} = {f} must lie strictly between 0 and the Nyquist limit {}",
                    side as f64 / 2.0
                )));
            }
        }
        if !(self.amplitude >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config("amplitude and noise_sigma must be non-negative".into()));
        }
        if self.base - self.amplitude < 0.0 || self.base + self.amplitude > 255.0 {
            return Err(Error::Config(format!(
                "base {} +/- amplitude {} leaves [0, 255]",
                self.base, self.amplitude
            )));
        }
        Ok(())
    }
}

pub fn generate_weave(p: &WeaveParams, m: usize, n: usize) -> Result<GrayImage> {
    weave_with_offset(p, m, n, (0.0, 0.0))
}

/// Weave translated by `offset` pixels (row, column).
fn weave_with_offset(p: &WeaveParams, m: usize, n: usize, offset: (f64, f64)) -> Result<GrayImage> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimensions { height: m, width: n });
    }
    p.validate(m, n)?;
    let noise = smoothed_noise(m, n, p.blob_scale, p.noise_sigma, p.seed);
    let wx: Vec<f64> = (0..m)
        .map(|x| (2.0 * PI * p.freq_x * (x as f64 + offset.0) / m as f64).sin())
        .collect();
    let wy: Vec<f64> = (0..n)
        .map(|y| (2.0 * PI * p.freq_y * (y as f64 + offset.1) / n as f64).sin())
        .collect();
    GrayImage::from_fn(m, n, |x, y| {
        let v = p.base + p.amplitude * wx[x] * wy[y] + noise.as_ref().map_or(0.0, |z| z[x * n + y]);
        quantize(v)
    })
}

/// White Gaussian noise, box-filtered with periodic boundaries and rescaled
/// to standard deviation `sigma`. `None` when `sigma` is zero.
fn smoothed_noise(m: usize, n: usize, blob: usize, sigma: f64, seed: u64) -> Option<Vec<f64>> {
    if sigma == 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    if blob > 1 {
        z = box_filter(&z, m, n, blob);
    }
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    let scale = if sd > 0.0 { sigma / sd } else { 0.0 };
    Some(z.iter().map(|v| (v - mean) * scale).collect())
}

/// Separable periodic moving average with window `k`.
fn box_filter(z: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let half = k / 2;
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, line_stride: usize| {
        let mut out = vec![0.0; src.len()];
        for l in 0..lines {
            let at = |i: usize| src[l * line_stride + (i % len) * stride];
            let mut acc: f64 = (0..k).map(|j| at(j + len - half % len)).sum();
            for i in 0..len {
                out[l * line_stride + i * stride] = acc / k as f64;
                acc += at(i + k + len - half % len) - at(i + len - half % len);
            }
        }
        out
    };
    let rows = pass(z, n, 1, m, n);
    pass(&rows, m, n, n, 1)
}

/// Multiplies by the dome `1 - strength * (r / r_max)^2`, where `r` is the
/// distance to `center` and `r_max` the distance to the farthest corner.
pub fn apply_pressing_gradient(img: &GrayImage, center: (f64, f64), strength: f64) -> Result<GrayImage> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(format!("pressing strength {strength} outside [0, 1]")));
    }
    let (h, w) = (img.height() as f64 - 1.0, img.width() as f64 - 1.0);
    let r2_max = [(0.0, 0.0), (0.0, w), (h, 0.0), (h, w)]
        .iter()
        .map(|&(r, c)| (r - center.0).powi(2) + (c - center.1).powi(2))
        .fold(0.0, f64::max);
    GrayImage::from_fn(img.height(), img.width(), |r, c| {
        let p = img.get(r, c) as f64;
        if r2_max == 0.0 {
            return quantize(p * (1.0 - strength));
        }
        let r2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
        quantize(p * (1.0 - strength * r2 / r2_max))
    })
}

pub fn image_center(img: &GrayImage) -> (f64, f64) {
    ((img.height() as f64 - 1.0) / 2.0, (img.width() as f64 - 1.0) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    Hole,
    MissingYarn,
    Wrinkle,
}

impl DefectKind {
    pub const ALL: [DefectKind; 3] = [DefectKind::Hole, DefectKind::MissingYarn, DefectKind::Wrinkle];

    /// Sign of `intensity_delta` in a generated corpus: holes and missing
    /// yarns press less into the sensor and read darker, wrinkles stand
    /// proud and read brighter.
    pub fn polarity(self) -> f64 {
        match self {
            DefectKind::Hole | DefectKind::MissingYarn => -1.0,
            DefectKind::Wrinkle => 1.0,
        }
    }
}

pub const MIN_EXTENT: usize = 3;

/// Texture amplitude kept inside a missing-yarn band.
const YARN_RESIDUAL: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub location: (usize, usize),
    pub extent: usize,
    pub intensity_delta: f64,
}

/// Geometry of a defect after its seeded choices are made.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DefectLocus {
    /// Disk of radius `extent` around `location`.
    Point { row: f64, col: f64 },
    /// Full-width band (`horizontal`) or full-height band centred on `location`.
    Band { horizontal: bool, center: f64 },
    /// Line through `location` with unit direction `(dr, dc)`.
    Line { row: f64, col: f64, dr: f64, dc: f64 },
}

impl DefectLocus {
    /// Distance of pixel `(r, c)` from the locus.
    pub fn distance(&self, r: usize, c: usize) -> f64 {
        let (r, c) = (r as f64, c as f64);
        match *self {
            DefectLocus::Point { row, col } => ((r - row).powi(2) + (c - col).powi(2)).sqrt(),
            DefectLocus::Band { horizontal: true, center } => (r - center).abs(),
            DefectLocus::Band { horizontal: false, center } => (c - center).abs(),
            DefectLocus::Line { row, col, dr, dc } => ((r - row) * dc - (c - col) * dr).abs(),
        }
    }
}

impl DefectSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.extent < MIN_EXTENT {
            return Err(Error::Config(format!(
                "defect extent {} below minimum {MIN_EXTENT}",
                self.extent
            )));
        }
        let (r, c) = self.location;
        let e = self.extent;
        let inside = match self.kind {
            DefectKind::Hole => r >= e && c >= e && r + e < height && c + e < width,
            DefectKind::MissingYarn => r >= e / 2 && c >= e / 2 && r + e / 2 < height && c + e / 2 < width,
            DefectKind::Wrinkle => r < height && c < width,
        };
        if !inside {
            return Err(Error::Config(format!(
                "{:?} defect at {:?} with extent {e} leaves the {height}x{width} image",
                self.kind, self.location
            )));
        }
        if !self.intensity_delta.is_finite() {
            return Err(Error::Config("intensity_delta must be finite".into()));
        }
        Ok(())
    }

    /// Resolves the seeded choices (band orientation, ridge angle).
    pub fn locus(&self, seed: u64) -> DefectLocus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (row, col) = (self.location.0 as f64, self.location.1 as f64);
        match self.kind {
            DefectKind::Hole => DefectLocus::Point { row, col },
            DefectKind::MissingYarn => {
                let horizontal = rng.random_bool(0.5);
                DefectLocus::Band {
                    horizontal,
                    center: if horizontal { row } else { col },
                }
            }
            DefectKind::Wrinkle => {
                let theta = rng.random_range(0.0..PI);
                DefectLocus::Line {
                    row,
                    col,
                    dr: theta.sin(),
                    dc: theta.cos(),
                }
            }
        }
    }
}

/// Injects one defect. Pixels farther than `extent` from the defect locus
/// are left untouched.
///
/// * hole: a soft-edged disk of radius `extent`; inside, pixels blend toward
///   the disk mean shifted by `intensity_delta`, fully at the centre half.
/// * missing_yarn: a band `extent` wide across the image keeps only a small
///   fraction of its texture around the band mean, shifted by
///   `intensity_delta`.
/// * wrinkle: adds a Gaussian ridge of height `intensity_delta`
///   (sigma `extent / 3`) along a line at a seeded angle.
pub fn inject_defect(img: &GrayImage, d: &DefectSpec, seed: u64) -> Result<GrayImage> {
    d.validate(img.height(), img.width())?;
    let locus = d.locus(seed);
    let e = d.extent as f64;
    let within = |r: usize, c: usize, reach: f64| locus.distance(r, c) <= reach;
    let region_mean = |reach: f64| {
        let (mut sum, mut count) = (0.0, 0usize);
        for r in 0..img.height() {
            for c in 0..img.width() {
                if within(r, c, reach) {
                    sum += img.get(r, c) as f64;
                    count += 1;
                }
            }
        }
        sum / count.max(1) as f64
    };
    let mut out = img.clone();
    match d.kind {
        DefectKind::Hole => {
            let target = region_mean(e) + d.intensity_delta;
            for r in 0..img.height() {
                for c in 0..img.width() {
                    let dist = locus.distance(r, c);
                    if dist <= e {
                        let w = ((e - dist) / (0.5 * e)).min(1.0);
                        let p = img.get(r, c) as f64;
                        out.set(r, c, quantize(p + w * (target - p)));
                    }
                }
            }
        }
        DefectKind::MissingYarn => {
            let half = e / 2.0;
            let mean = region_mean(half);
            for r in 0..img.height() {
                for c in 0..img.width() {
                    if within(r, c, half) {
                        let p = img.get(r, c) as f64;
                        out.set(r, c, quantize(mean + YARN_RESIDUAL * (p - mean) + d.intensity_delta));
                    }
                }
            }
        }
        DefectKind::Wrinkle => {
            let sigma = e / 3.0;
            for r in 0..img.height() {
                for c in 0..img.width() {
                    let dist = locus.distance(r, c);
                    if dist <= e {
                        let p = img.get(r, c) as f64;
                        let bump = d.intensity_delta * (-dist * dist / (2.0 * sigma * sigma)).exp();
                        out.set(r, c, quantize(p + bump));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One fabric type of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub fabric_type: String,
    /// `seed` is ignored; every sample draws its own.
    pub weave: WeaveParams,
    pub samples_per_label: usize,
}

/// How defective samples are damaged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectMix {
    pub kinds: Vec<DefectKind>,
    pub extent_min: usize,
    pub extent_max: usize,
    /// Magnitude range of `intensity_delta`.
    pub delta_min: f64,
    pub delta_max: f64,
    /// Draw the sign of `intensity_delta` at random instead of using
    /// [`DefectKind::polarity`].
    pub mixed_polarity: bool,
}

impl Default for DefectMix {
    fn default() -> Self {
        Self {
            kinds: DefectKind::ALL.to_vec(),
            extent_min: 50,
            extent_max: 90,
            delta_min: 60.0,
            delta_max: 100.0,
            mixed_polarity: false,
        }
    }
}

/// Pressing gradient drawn for every sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PressingSpec {
    pub strength_min: f64,
    pub strength_max: f64,
    /// Maximum centre displacement as a fraction of each image side.
    pub center_jitter: f64,
}

impl Default for PressingSpec {
    fn default() -> Self {
        Self {
            strength_min: 0.3,
            strength_max: 0.5,
            center_jitter: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Allow rotated-by-90-degree samples.
    pub rotate: bool,
    pub pressing: PressingSpec,
    pub defects: DefectMix,
    #[serde(rename = "family")]
    pub families: Vec<FamilySpec>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self::standard(0, 40)
    }
}

impl CorpusSpec {
    /// Four fine regular weaves (types 1, 3, 4, 6) and two coarse blobby
    /// irregular ones (types 2, 5) at 480x600.
    pub fn standard(seed: u64, samples_per_label: usize) -> Self {
        let fine = |t: &str, fx: f64, fy: f64| FamilySpec {
            fabric_type: t.into(),
            weave: WeaveParams {
                freq_x: fx,
                freq_y: fy,
                amplitude: 14.0,
                base: 128.0,
                noise_sigma: 6.0,
                blob_scale: 0,
                seed: 0,
            },
            samples_per_label,
        };
        let blobby = |t: &str, fx: f64, fy: f64, blob: usize| FamilySpec {
            fabric_type: t.into(),
            weave: WeaveParams {
                freq_x: fx,
                freq_y: fy,
                amplitude: 12.0,
                base: 128.0,
                noise_sigma: 14.0,
                blob_scale: blob,
                seed: 0,
            },
            samples_per_label,
        };
        Self {
            height: 480,
            width: 600,
            seed,
            rotate: true,
            pressing: PressingSpec::default(),
            defects: DefectMix::default(),
            families: vec![
                fine("1", 60.0, 75.0),
                blobby("2", 8.0, 10.0, 15),
                fine("3", 48.0, 60.0),
                fine("4", 72.0, 90.0),
                blobby("5", 6.0, 8.0, 21),
                fine("6", 40.0, 50.0),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("corpus needs at least one family".into()));
        }
        let m = &self.defects;
        if m.kinds.is_empty() || m.extent_min < MIN_EXTENT || m.extent_max < m.extent_min {
            return Err(Error::Config("invalid defect mix".into()));
        }
        if !(m.delta_min >= 0.0 && m.delta_max >= m.delta_min) {
            return Err(Error::Config("invalid defect delta range".into()));
        }
        if 2 * m.extent_max + 2 >= self.height.min(self.width) {
            return Err(Error::Config("defect extent too large for the image".into()));
        }
        let p = &self.pressing;
        if !(0.0 <= p.strength_min && p.strength_min <= p.strength_max && p.strength_max <= 1.0) {
            return Err(Error::Config("pressing strength range must lie in [0, 1]".into()));
        }
        if !(0.0..0.5).contains(&p.center_jitter) {
            return Err(Error::Config("center_jitter must lie in [0, 0.5)".into()));
        }
        for f in &self.families {
            if f.samples_per_label == 0 {
                return Err(Error::Config(format!("family {} has no samples", f.fabric_type)));
            }
            if f.fabric_type.is_empty() || f.fabric_type.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!("bad fabric type name {:?}", f.fabric_type)));
            }
            // A rotated sample swaps the roles of height and width.
            f.weave.validate(self.height, self.width)?;
            if self.rotate {
                f.weave.validate(self.width, self.height)?;
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.families.iter().map(|f| 2 * f.samples_per_label).sum()
    }
}

/// Everything drawn for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub index: usize,
    pub fabric_type: String,
    pub label: Label,
    pub file: String,
    pub weave: WeaveParams,
    pub offset: (f64, f64),
    pub rotated: bool,
    pub pressing_center: (f64, f64),
    pub pressing_strength: f64,
    pub defect: Option<(DefectSpec, u64)>,
}

/// Draws the plan for every sample. Sample `i` uses ChaCha8 seeded with the
/// corpus seed on stream `i`, so plans do not depend on generation order.
pub fn plan_corpus(spec: &CorpusSpec) -> Result<Vec<SamplePlan>> {
    spec.validate()?;
    let mut plans = Vec::with_capacity(spec.sample_count());
    for f in &spec.families {
        for label in Label::ALL {
            for j in 0..f.samples_per_label {
                let index = plans.len();
                plans.push(plan_sample(spec, f, label, j, index));
            }
        }
    }
    Ok(plans)
}

fn plan_sample(spec: &CorpusSpec, f: &FamilySpec, label: Label, j: usize, index: usize) -> SamplePlan {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (h, w) = (spec.height, spec.width);
    let rotated = spec.rotate && rng.random_bool(0.5);
    let offset = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
    let weave = WeaveParams {
        seed: rng.random(),
        ..f.weave.clone()
    };
    let p = &spec.pressing;
    let jitter = |rng: &mut ChaCha8Rng, side: usize| {
        let c = (side as f64 - 1.0) / 2.0;
        if p.center_jitter > 0.0 {
            c + rng.random_range(-p.center_jitter..p.center_jitter) * side as f64
        } else {
            c
        }
    };
    let pressing_center = (jitter(&mut rng, h), jitter(&mut rng, w));
    let pressing_strength = if p.strength_max > p.strength_min {
        rng.random_range(p.strength_min..p.strength_max)
    } else {
        p.strength_min
    };
    let defect = (label == Label::Defective).then(|| {
        let m = &spec.defects;
        let kind = m.kinds[rng.random_range(0..m.kinds.len())];
        let extent = rng.random_range(m.extent_min..=m.extent_max);
        let margin = extent + 1;
        let location = (rng.random_range(margin..h - margin), rng.random_range(margin..w - margin));
        let magnitude = if m.delta_max > m.delta_min {
            rng.random_range(m.delta_min..m.delta_max)
        } else {
            m.delta_min
        };
        let flip = rng.random_bool(0.5);
        let sign = match (m.mixed_polarity, flip) {
            (false, _) => kind.polarity(),
            (true, true) => 1.0,
            (true, false) => -1.0,
        };
        let d = DefectSpec {
            kind,
            location,
            extent,
            intensity_delta: sign * magnitude,
        };
        (d, rng.random())
    });
    SamplePlan {
        index,
        fabric_type: f.fabric_type.clone(),
        label,
        file: format!("type{}_{}_{j:03}.pgm", f.fabric_type, label.as_str()),
        weave,
        offset,
        rotated,
        pressing_center,
        pressing_strength,
        defect,
    }
}

/// Clockwise quarter turn.
pub fn rotate90(img: &GrayImage) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    GrayImage::from_fn(w, h, |r, c| img.get(h - 1 - c, r)).expect("non-empty image")
}

/// Renders one planned sample: weave (rotated if planned), pressing gradient,
/// then the defect.
pub fn render_sample(spec: &CorpusSpec, plan: &SamplePlan) -> Result<GrayImage> {
    let (h, w) = (spec.height, spec.width);
    let fabric = if plan.rotated {
        rotate90(&weave_with_offset(&plan.weave, w, h, (plan.offset.1, plan.offset.0))?)
    } else {
        weave_with_offset(&plan.weave, h, w, plan.offset)?
    };
    let pressed = apply_pressing_gradient(&fabric, plan.pressing_center, plan.pressing_strength)?;
    match &plan.defect {
        Some((d, seed)) => inject_defect(&pressed, d, *seed),
        None => Ok(pressed),
    }
}

/// Writes every sample as PGM plus `manifest.csv` (relative paths) into
/// `out_dir`, and returns the manifest.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let plans = plan_corpus(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    plans
        .par_iter()
        .map(|plan| save_image(&render_sample(spec, plan)?, out_dir.join(&plan.file)))
        .collect::<Result<()>>()?;
    let rows = plans
        .iter()
        .map(|p| Sample {
            path: p.file.clone(),
            fabric_type: p.fabric_type.clone(),
            label: p.label,
        })
        .collect();
    let manifest = Manifest::new(rows, out_dir);
    manifest.write(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
