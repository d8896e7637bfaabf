//! Fourier-domain intensity adjustment.
//!
//! The pipeline is gray conversion, forward DFT, zeroing of the strongest
//! spectral bins, inverse DFT, a linear stretch onto `[0, 255]`, and a
//! multiplicative rescale so that the mean intensity lands on a fixed target.
//! Removing the strongest bins strips the DC level and the broad
//! low-frequency shading left by uneven sensor pressure.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AnyImage, GrayImage, RealPlane};
use crate::spectral::{self, Spectrum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityConfig {
    /// Number of largest-amplitude bins zeroed in the spectrum.
    pub peaks_to_remove: usize,
    /// Mean intensity of the adjusted image.
    pub target_mean: f64,
    /// Also zero the Hermitian partner of every removed bin.
    pub mirror_peaks: bool,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        Self {
            peaks_to_remove: 5,
            target_mean: 90.0,
            mirror_peaks: true,
        }
    }
}

impl IntensityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_mean > 0.0 && self.target_mean < 255.0) {
            return Err(Error::Config(format!(
                "target_mean must lie in (0, 255), got {}",
                self.target_mean
            )));
        }
        Ok(())
    }
}

/// Zeroes the `peaks_to_remove` strongest bins (and their partners when
/// `mirror_peaks` is set). Every other bin is left untouched.
pub fn remove_dominant_peaks(s: &Spectrum, cfg: &IntensityConfig) -> Result<Spectrum> {
    let w = spectral::amplitude(s);
    let peaks = spectral::top_k_points(&w, cfg.peaks_to_remove)?;
    let mut out = s.clone();
    let zero = Complex64::new(0.0, 0.0);
    for (u, v) in peaks {
        out.set(u, v, zero);
        if cfg.mirror_peaks {
            let (pu, pv) = s.partner(u, v);
            out.set(pu, pv, zero);
        }
    }
    Ok(out)
}

/// Ranges at or below this are transform round-off, not image content.
pub const DEGENERATE_SPAN: f64 = 1e-9;

/// Maps the plane's range affinely onto `[0, 255]`.
pub fn linear_stretch(p: &RealPlane) -> Result<RealPlane> {
    let (lo, hi) = p.min_max();
    let span = hi - lo;
    if !(span > DEGENERATE_SPAN) {
        return Err(Error::DegenerateStretch);
    }
    Ok(p.map(|v| (v - lo) / span * 255.0))
}

/// Scales the plane by `target / mean`, clamping into `[0, 255]`.
pub fn normalize_mean(p: &RealPlane, target: f64) -> Result<RealPlane> {
    let mean = p.mean();
    if !(mean > 0.0) {
        return Err(Error::NonpositiveMean(mean));
    }
    let scale = target / mean;
    Ok(p.map(|v| (v * scale).clamp(0.0, 255.0)))
}

/// Every intermediate of one adjustment run, for diagnostics and tests.
#[derive(Clone, Debug)]
pub struct IntensityStages {
    pub gray: GrayImage,
    pub spectrum: Spectrum,
    pub filtered: Spectrum,
    /// Real-valued inverse of the filtered spectrum.
    pub restored: RealPlane,
    /// Largest imaginary component dropped by the inverse transform.
    pub imaginary_residual: f64,
    pub stretched: RealPlane,
    /// Multiplier `target / mean(stretched)` applied before clamping.
    pub scale: f64,
    pub normalized: RealPlane,
    pub output: GrayImage,
}

pub fn adjust_intensity_stages(img: &GrayImage, cfg: &IntensityConfig) -> Result<IntensityStages> {
    cfg.validate()?;
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::InvalidDimensions {
            height: img.height(),
            width: img.width(),
        });
    }
    let spectrum = spectral::dft2(&img.to_plane());
    let filtered = remove_dominant_peaks(&spectrum, cfg)?;
    let (restored, imaginary_residual) = spectral::idft2(&filtered);
    let stretched = linear_stretch(&restored)?;
    let scale = cfg.target_mean / stretched.mean();
    let normalized = normalize_mean(&stretched, cfg.target_mean)?;
    let output = normalized.to_gray();
    Ok(IntensityStages {
        gray: img.clone(),
        spectrum,
        filtered,
        restored,
        imaginary_residual,
        stretched,
        scale,
        normalized,
        output,
    })
}

/// Full intensity adjustment of a gray image.
pub fn adjust_intensity(img: &GrayImage, cfg: &IntensityConfig) -> Result<GrayImage> {
    adjust_intensity_stages(img, cfg).map(|s| s.output)
}

/// Adjusts either kind of decoded image, converting RGB to gray first.
pub fn adjust_any(img: &AnyImage, cfg: &IntensityConfig) -> Result<GrayImage> {
    match img {
        AnyImage::Gray(g) => adjust_intensity(g, cfg),
        AnyImage::Rgb(c) => adjust_intensity(&c.to_gray(), cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{amplitude, dft2};
    use std::f64::consts::PI;

    fn cfg(k: usize, mirror: bool) -> IntensityConfig {
        IntensityConfig {
            peaks_to_remove: k,
            mirror_peaks: mirror,
            ..Default::default()
        }
    }

    #[test]
    fn constant_plane_loses_everything() {
        let s = dft2(&RealPlane::new(4, 4, vec![12.0; 16]).unwrap());
        let out = remove_dominant_peaks(&s, &cfg(1, true)).unwrap();
        assert!(out.values().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn zero_peaks_is_identity() {
        let p = RealPlane::from_fn(5, 6, |r, c| (r * 6 + c) as f64).unwrap();
        let s = dft2(&p);
        assert_eq!(remove_dominant_peaks(&s, &cfg(0, true)).unwrap(), s);
    }

    #[test]
    fn dc_goes_first_and_cosine_survives() {
        // mean 10, cosine amplitude 4: DC amplitude 10 beats each half-peak of 2.
        let (m, n, f) = (16, 8, 3);
        let p = RealPlane::from_fn(m, n, |x, _| 10.0 + 4.0 * (2.0 * PI * (f * x) as f64 / m as f64).cos())
            .unwrap();
        let s = dft2(&p);
        let out = amplitude(&remove_dominant_peaks(&s, &cfg(1, true)).unwrap());
        assert_eq!(out.get(0, 0), 0.0);
        assert!((out.get(f, 0) - 2.0).abs() < 1e-9);
        assert!((out.get(m - f, 0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn literal_mode_leaves_partner() {
        let (m, n) = (8, 8);
        let p = RealPlane::from_fn(m, n, |x, y| (2.0 * PI * (x + 2 * y) as f64 / 8.0).cos()).unwrap();
        let s = dft2(&p);
        let literal = amplitude(&remove_dominant_peaks(&s, &cfg(1, false)).unwrap());
        let zeroed = literal.values().iter().filter(|&&a| a == 0.0).count();
        let mirrored = amplitude(&remove_dominant_peaks(&s, &cfg(1, true)).unwrap());
        assert!(literal.values().iter().any(|&a| a > 0.4));
        assert!(mirrored.values().iter().all(|&a| a < 1e-9));
        assert!(zeroed >= 1);
    }

    #[test]
    fn stretch_endpoints_and_affine_invariance() {
        let p = RealPlane::new(1, 2, vec![-1.0, 1.0]).unwrap();
        assert_eq!(linear_stretch(&p).unwrap().values(), &[0.0, 255.0]);

        let q = RealPlane::new(1, 4, vec![0.0, 10.0, 200.0, 255.0]).unwrap();
        let out = linear_stretch(&q).unwrap();
        for (a, b) in q.values().iter().zip(out.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let base = RealPlane::from_fn(3, 3, |r, c| ((r * 5 + c * 3) % 7) as f64).unwrap();
        let affine = base.map(|v| 3.5 * v - 20.0);
        let (a, b) = (linear_stretch(&base).unwrap(), linear_stretch(&affine).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn stretch_rejects_constant() {
        let p = RealPlane::new(2, 2, vec![4.0; 4]).unwrap();
        assert!(matches!(linear_stretch(&p), Err(Error::DegenerateStretch)));
    }

    #[test]
    fn normalize_cases() {
        let p = RealPlane::new(2, 2, vec![45.0; 4]).unwrap();
        assert!(normalize_mean(&p, 90.0).unwrap().values().iter().all(|&v| (v - 90.0).abs() < 1e-12));

        let p = RealPlane::new(1, 2, vec![100.0, 260.0]).unwrap();
        let out = normalize_mean(&p, 90.0).unwrap();
        assert_eq!(out.values(), &[50.0, 130.0]);
        assert!((out.mean() - 90.0).abs() < 1e-9);

        // mean 60 with a 200 pixel: 200 * 1.5 = 300 clamps to 255.
        let p = RealPlane::new(1, 4, vec![200.0, 0.0, 0.0, 40.0]).unwrap();
        let out = normalize_mean(&p, 90.0).unwrap();
        assert_eq!(out.values(), &[255.0, 0.0, 0.0, 60.0]);
        assert!(out.mean() <= 90.0);
        assert!((90.0 - out.mean() - (300.0 - 255.0) / 4.0).abs() < 1e-12);

        assert!(matches!(
            normalize_mean(&RealPlane::new(1, 1, vec![0.0]).unwrap(), 90.0),
            Err(Error::NonpositiveMean(_))
        ));
    }

    fn weave(m: usize, n: usize, offset: f64, gain: f64) -> GrayImage {
        GrayImage::from_fn(m, n, |x, y| {
            let t = (2.0 * PI * 5.0 * x as f64 / m as f64).sin() * (2.0 * PI * 3.0 * y as f64 / n as f64).sin();
            let shade = 1.0 - 0.3 * ((x as f64 / m as f64) - 0.5).powi(2);
            ((offset + 30.0 * t + 7.0 * ((x * 7 + y * 13) % 11) as f64 / 11.0) * shade * gain).round() as u8
        })
        .unwrap()
    }

    #[test]
    fn global_scale_cancels() {
        let a = GrayImage::from_fn(24, 30, |r, c| ((r * 3 + c * 5) % 17 * 6 + 10) as u8).unwrap();
        let b = GrayImage::from_fn(24, 30, |r, c| 2 * a.get(r, c)).unwrap();
        let cfg = IntensityConfig::default();
        assert_eq!(adjust_intensity(&a, &cfg).unwrap(), adjust_intensity(&b, &cfg).unwrap());
    }

    #[test]
    fn dc_offset_is_invisible() {
        let base = weave(40, 48, 60.0, 1.0);
        let cfg = IntensityConfig::default();
        let reference = adjust_intensity(&base, &cfg).unwrap();
        for m in [30u8, 60] {
            let shifted = GrayImage::from_fn(40, 48, |r, c| base.get(r, c) + m).unwrap();
            assert_eq!(adjust_intensity(&shifted, &cfg).unwrap(), reference);
        }
    }

    #[test]
    fn output_mean_hits_target_when_unclamped() {
        let img = weave(48, 64, 100.0, 1.0);
        let st = adjust_intensity_stages(&img, &IntensityConfig::default()).unwrap();
        let (lo, hi) = st.stretched.min_max();
        assert_eq!((lo, hi), (0.0, 255.0));
        if st.scale <= 1.0 {
            assert!((st.output.mean() - 90.0).abs() <= 1.0);
        }
    }

    #[test]
    fn constant_image_is_degenerate() {
        // Non-power-of-two sides leave round-off in the restored plane.
        for (h, w) in [(8, 8), (20, 30), (480, 600)] {
            let img = GrayImage::filled(h, w, 77).unwrap();
            assert!(matches!(
                adjust_intensity(&img, &IntensityConfig::default()),
                Err(Error::DegenerateStretch)
            ));
        }
    }

    #[test]
    fn rejects_tiny_images_and_bad_targets() {
        let img = GrayImage::filled(1, 8, 77).unwrap();
        assert!(adjust_intensity(&img, &IntensityConfig::default()).is_err());
        let bad = IntensityConfig {
            target_mean: 255.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn peak_removal_never_raises_amplitudes() {
        let img = weave(32, 32, 80.0, 1.0);
        let s = dft2(&img.to_plane());
        for k in [1, 3, 5, 9] {
            for mirror in [false, true] {
                let before = amplitude(&s);
                let after = amplitude(&remove_dominant_peaks(&s, &cfg(k, mirror)).unwrap());
                let mut changed = 0;
                for (a, b) in before.values().iter().zip(after.values()) {
                    assert!(b <= a);
                    if b != a {
                        assert_eq!(*b, 0.0);
                        changed += 1;
                    }
                }
                assert!(changed <= if mirror { 2 * k } else { k });
            }
        }
    }
}
