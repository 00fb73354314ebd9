//! Normalized cross-correlation: correlogram computation (direct and
//! FFT-accelerated), peak analysis, and exact peak gradients.
//!
//! A correlogram holds the Pearson r between the template and the source
//! window at every valid placement. Values are computed in double
//! precision, clamped to `[-1, 1]`, and emitted in single precision;
//! [`Plane`]-valued variants keep full precision for the training path.
//!
//! Zero-variance convention: a window or template whose sum of squared
//! deviations falls below [`VARIANCE_FLOOR`] yields r = 0 and a zero
//! gradient, so blank regions can never out-rank a real correlation.

mod direct;
mod fft;
mod grad;

pub use direct::{ncc_direct, ncc_direct_plane};
pub use fft::{ncc_fft, ncc_fft_plane};
pub use grad::{ncc_peak_gradients, peak_gradient_plane, PeakGradient};

use crate::{Error, Plane, Result};

/// Sum-of-squared-deviations floor below which a template or window is
/// treated as zero-variance (intensities nominally in [0,1]).
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Pearson r for every template placement inside the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlogram {
    width: usize,
    height: usize,
    r: Vec<f32>,
}

impl Correlogram {
    pub(crate) fn from_plane(p: &Plane) -> Self {
        Self {
            width: p.width(),
            height: p.height(),
            r: p.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.r
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.r[y * self.width + x]
    }

    /// Round-trips through the f64 plane used internally.
    pub fn to_plane(&self) -> Plane {
        Plane::from_vec(
            self.width,
            self.height,
            self.r.iter().map(|&v| v as f64).collect(),
        )
    }
}

/// Primary/secondary peak locations and the correlation gap between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakAnalysis {
    pub primary_loc: (usize, usize),
    pub r_max: f64,
    pub secondary_loc: (usize, usize),
    pub r_second: f64,
    pub r_delta: f64,
    pub exclusion: usize,
    /// True when the exclusion square covered the whole correlogram; in
    /// that case `r_second` is -1 and `secondary_loc` repeats the primary.
    pub remainder_empty: bool,
}

/// Finds the primary peak, removes an exclusion square centered on it
/// (side rounded up to the nearest odd so it can center on the peak,
/// clipped at borders), and finds the secondary peak in the remainder.
///
/// Ties at either argmax resolve to the smallest row-major index.
pub fn analyze_peaks(c: &Correlogram, exclusion: usize) -> Result<PeakAnalysis> {
    analyze_values(c.width, c.height, |i| c.r[i] as f64, exclusion)
}

/// [`analyze_peaks`] on a double-precision correlogram.
pub fn analyze_peaks_plane(c: &Plane, exclusion: usize) -> Result<PeakAnalysis> {
    analyze_values(c.width(), c.height(), |i| c.data()[i], exclusion)
}

fn analyze_values(
    width: usize,
    height: usize,
    at: impl Fn(usize) -> f64,
    exclusion: usize,
) -> Result<PeakAnalysis> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("empty correlogram".into()));
    }
    if exclusion == 0 {
        return Err(Error::InvalidArgument("exclusion must be >= 1".into()));
    }

    let mut primary = (0usize, 0usize);
    let mut r_max = f64::NEG_INFINITY;
    for y in 0..height {
        for x in 0..width {
            let v = at(y * width + x);
            if v > r_max {
                r_max = v;
                primary = (x, y);
            }
        }
    }

    let half = exclusion / 2;
    let mut secondary = primary;
    let mut r_second = f64::NEG_INFINITY;
    for y in 0..height {
        for x in 0..width {
            if x.abs_diff(primary.0) <= half && y.abs_diff(primary.1) <= half {
                continue;
            }
            let v = at(y * width + x);
            if v > r_second {
                r_second = v;
                secondary = (x, y);
            }
        }
    }

    let remainder_empty = r_second == f64::NEG_INFINITY;
    if remainder_empty {
        r_second = -1.0;
        secondary = primary;
    }

    Ok(PeakAnalysis {
        primary_loc: primary,
        r_max,
        secondary_loc: secondary,
        r_second,
        r_delta: r_max - r_second,
        exclusion,
        remainder_empty,
    })
}

/// Centered template values and their sum of squared deviations.
pub(crate) fn center(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let sst = centered.iter().map(|v| v * v).sum::<f64>();
    (centered, sst)
}

pub(crate) fn check_dims(t: &Plane, s: &Plane) -> Result<(usize, usize)> {
    if t.width() > s.width() || t.height() > s.height() {
        return Err(Error::Shape(format!(
            "template {}x{} larger than source {}x{}",
            t.width(),
            t.height(),
            s.width(),
            s.height()
        )));
    }
    Ok((s.width() - t.width() + 1, s.height() - t.height() + 1))
}

#[inline]
pub(crate) fn normalized_r(num: f64, sst: f64, ssw: f64) -> f64 {
    if sst <= VARIANCE_FLOOR || ssw <= VARIANCE_FLOOR {
        return 0.0;
    }
    (num / (sst * ssw).sqrt()).clamp(-1.0, 1.0)
}
