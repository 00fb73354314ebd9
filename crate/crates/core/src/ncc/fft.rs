//! FFT-accelerated correlogram computation.
//!
//! The numerator is the frequency-domain cross-correlation of the
//! mean-removed template against the source; window sums come from
//! integral images. Padded size is the next power of two >= the source
//! size per dimension, so outputs are reproducible per build.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::{Correlogram, Plane, Raster, Result};

use super::{center, check_dims, normalized_r};

/// FFT NCC on rasters; numerically equivalent to [`super::ncc_direct`]
/// within 1e-5.
pub fn ncc_fft(template: &Raster, source: &Raster) -> Result<Correlogram> {
    let p = ncc_fft_plane(&Plane::from_raster(template), &Plane::from_raster(source))?;
    Ok(Correlogram::from_plane(&p))
}

/// FFT NCC with double-precision output.
pub fn ncc_fft_plane(template: &Plane, source: &Plane) -> Result<Plane> {
    let (out_w, out_h) = check_dims(template, source)?;
    let (tw, th) = (template.width(), template.height());
    let (sw, sh) = (source.width(), source.height());
    let n = (tw * th) as f64;

    let (tc, sst) = center(template.data());

    let pw = sw.next_power_of_two();
    let ph = sh.next_power_of_two();

    // cross-correlation via conj(FFT(template)) * FFT(source)
    let mut t_buf = vec![Complex::new(0.0, 0.0); pw * ph];
    for y in 0..th {
        for x in 0..tw {
            t_buf[y * pw + x].re = tc[y * tw + x];
        }
    }
    let mut s_buf = vec![Complex::new(0.0, 0.0); pw * ph];
    for y in 0..sh {
        let row = source.row(y);
        for x in 0..sw {
            s_buf[y * pw + x].re = row[x];
        }
    }
    fft2(&mut t_buf, pw, ph, Direction::Forward);
    fft2(&mut s_buf, pw, ph, Direction::Forward);
    for (t, s) in t_buf.iter_mut().zip(&s_buf) {
        *t = t.conj() * s;
    }
    fft2(&mut t_buf, pw, ph, Direction::Inverse);
    let scale = 1.0 / (pw * ph) as f64;

    // integral images for window sums
    let (ii, ii2) = integral_images(source);
    let window = |table: &[f64], u: usize, v: usize| -> f64 {
        let w1 = sw + 1;
        table[(v + th) * w1 + (u + tw)] + table[v * w1 + u]
            - table[v * w1 + (u + tw)]
            - table[(v + th) * w1 + u]
    };

    let mut out = vec![0.0f64; out_w * out_h];
    for v in 0..out_h {
        for u in 0..out_w {
            let num = t_buf[v * pw + u].re * scale;
            let ws = window(&ii, u, v);
            let wq = window(&ii2, u, v);
            let ssw = (wq - ws * ws / n).max(0.0);
            out[v * out_w + u] = normalized_r(num, sst, ssw);
        }
    }
    Ok(Plane::from_vec(out_w, out_h, out))
}

/// Summed-area tables of values and squares, with a zero top row/column.
fn integral_images(img: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let w1 = w + 1;
    let mut ii = vec![0.0f64; w1 * (h + 1)];
    let mut ii2 = vec![0.0f64; w1 * (h + 1)];
    for y in 0..h {
        let row = img.row(y);
        let mut run = 0.0f64;
        let mut run2 = 0.0f64;
        for x in 0..w {
            let v = row[x];
            run += v;
            run2 += v * v;
            ii[(y + 1) * w1 + (x + 1)] = ii[y * w1 + (x + 1)] + run;
            ii2[(y + 1) * w1 + (x + 1)] = ii2[y * w1 + (x + 1)] + run2;
        }
    }
    (ii, ii2)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Direction {
    Forward,
    Inverse,
}

static PLAN_CACHE: OnceLock<Mutex<HashMap<(usize, Direction), Arc<dyn Fft<f64>>>>> =
    OnceLock::new();

fn plan(len: usize, dir: Direction) -> Arc<dyn Fft<f64>> {
    let cache = PLAN_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((len, dir))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            match dir {
                Direction::Forward => planner.plan_fft_forward(len),
                Direction::Inverse => planner.plan_fft_inverse(len),
            }
        })
        .clone()
}

/// In-place 2D FFT (rows, transpose, rows, transpose back). Unnormalized,
/// like the underlying 1D transforms.
fn fft2(data: &mut [Complex<f64>], w: usize, h: usize, dir: Direction) {
    debug_assert_eq!(data.len(), w * h);
    let row_fft = plan(w, dir);
    let mut scratch = vec![Complex::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }
    let mut t = transpose(data, w, h);
    let col_fft = plan(h, dir);
    let mut scratch = vec![Complex::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
    for row in t.chunks_exact_mut(h) {
        col_fft.process_with_scratch(row, &mut scratch);
    }
    let back = transpose(&t, h, w);
    data.copy_from_slice(&back);
}

fn transpose(data: &[Complex<f64>], w: usize, h: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); w * h];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = data[y * w + x];
        }
    }
    out
}
