//! Separable 2D discrete Fourier transform and amplitude-spectrum helpers.
//!
//! Normalization: the forward transform carries the `1/(MN)` factor,
//!
//! ```text
//! F(u,v) = 1/(MN) * sum_x sum_y P(x,y) exp(-j2π(ux/M + vy/N))
//! ```
//!
//! and the inverse is unscaled, so `idft2(dft2(p)) == p` up to rounding.
//! `u`/`x` index rows and `v`/`y` index columns. Each 2D transform runs as
//! 1D FFTs over every row and then every column.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::RealPlane;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Complex frequency-domain matrix `F(u, v)`, row-major in `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidDimensions { height, width });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![Complex64::new(0.0, 0.0); height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.values[u * self.width + v]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: Complex64) {
        self.values[u * self.width + v] = value;
    }

    pub fn conj(&self) -> Spectrum {
        Spectrum {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|c| c.conj()).collect(),
        }
    }

    /// Coordinate of the Hermitian partner `((M-u) mod M, (N-v) mod N)`.
    pub fn partner(&self, u: usize, v: usize) -> (usize, usize) {
        ((self.height - u) % self.height, (self.width - v) % self.width)
    }
}

/// Element-wise modulus of a [`Spectrum`].
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeSpectrum {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AmplitudeSpectrum {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::InvalidDimensions { height, width });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("amplitudes must be finite and nonnegative".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.width + v]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.values[u * self.width + v] = value;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Coordinates of all bins ordered by amplitude, largest first; ties by
    /// `(u, v)` ascending.
    pub fn ranked(&self) -> Vec<(usize, usize)> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_unstable_by(|&a, &b| rank_order(&self.values, a, b));
        idx.into_iter().map(|i| (i / self.width, i % self.width)).collect()
    }
}

fn rank_order(values: &[f64], a: usize, b: usize) -> std::cmp::Ordering {
    values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// Forward 2D DFT with the `1/(MN)` factor.
pub fn dft2(p: &RealPlane) -> Spectrum {
    let (m, n) = (p.height(), p.width());
    let mut buf: Vec<Complex64> = p.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut buf, m, n, false);
    let scale = 1.0 / (m * n) as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    Spectrum {
        height: m,
        width: n,
        values: buf,
    }
}

/// Unscaled inverse 2D DFT. Returns the real part together with the largest
/// absolute imaginary component that was discarded.
pub fn idft2(s: &Spectrum) -> (RealPlane, f64) {
    let (m, n) = (s.height(), s.width());
    let mut buf = s.values.clone();
    transform(&mut buf, m, n, true);
    let residual = buf.iter().fold(0.0f64, |acc, c| acc.max(c.im.abs()));
    let values = buf.iter().map(|c| c.re).collect();
    let plane = RealPlane::new(m, n, values).expect("inverse transform of a finite spectrum is finite");
    (plane, residual)
}

/// In-place row-then-column transform of a row-major `m`x`n` buffer.
fn transform(buf: &mut [Complex64], m: usize, n: usize, inverse: bool) {
    let row_fft = plan(n, inverse);
    let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(n) {
        row_fft.process_with_scratch(row, &mut scratch);
    }
    if m == 1 {
        return;
    }
    let col_fft = plan(m, inverse);
    let mut transposed = transpose(buf, m, n);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex64::default());
    for col in transposed.chunks_exact_mut(m) {
        col_fft.process_with_scratch(col, &mut scratch);
    }
    let back = transpose(&transposed, n, m);
    buf.copy_from_slice(&back);
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

pub fn amplitude(s: &Spectrum) -> AmplitudeSpectrum {
    AmplitudeSpectrum {
        height: s.height,
        width: s.width,
        values: s.values.iter().map(|c| c.norm()).collect(),
    }
}

/// The `k` largest-amplitude coordinates, descending, ties broken by
/// lexicographic `(u, v)`.
pub fn top_k_points(w: &AmplitudeSpectrum, k: usize) -> Result<Vec<(usize, usize)>> {
    let total = w.values.len();
    if k > total {
        return Err(Error::Config(format!("k = {k} exceeds {total} spectral bins")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut idx: Vec<usize> = (0..total).collect();
    if k < total {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(&w.values, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(&w.values, a, b));
    Ok(idx.into_iter().map(|i| (i / w.width, i % w.width)).collect())
}

/// Maps an unshifted bin to its position in a centered (DC-in-the-middle)
/// layout: `((u + M/2) mod M, (v + N/2) mod N)`.
pub fn center_shift_coords(u: usize, v: usize, m: usize, n: usize) -> Result<(usize, usize)> {
    if u >= m || v >= n {
        return Err(Error::Config(format!("bin ({u}, {v}) outside {m}x{n} spectrum")));
    }
    Ok(((u + m / 2) % m, (v + n / 2) % n))
}
