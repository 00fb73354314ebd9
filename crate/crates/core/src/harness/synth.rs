//! Synthetic section stacks with known smooth warp fields.
//!
//! The base texture mixes dark blob keypoints (localizable), elongated
//! membrane-like curves and periodic grating patches (poorly localizable
//! or ambiguous), and smooth bright body regions (low texture). Each
//! section samples the base through a cumulative smooth warp and then
//! receives per-section defects: an additive low-frequency brightness
//! field, occlusion patches, and Gaussian pixel noise. Ground truth
//! between any two sections follows from the stored warp fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Raster, Result};

/// Per-pixel displacement field stored as two rasters.
#[derive(Debug, Clone)]
pub struct WarpField {
    pub dx: Raster,
    pub dy: Raster,
}

impl WarpField {
    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            dx: Raster::filled(width, height, 0.0),
            dy: Raster::filled(width, height, 0.0),
        }
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        Self {
            dx: Raster::filled(width, height, dx),
            dy: Raster::filled(width, height, dy),
        }
    }

    /// Bilinear sample, clamped at the borders.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        (bilinear(&self.dx, x, y), bilinear(&self.dy, x, y))
    }
}

fn bilinear(img: &Raster, x: f64, y: f64) -> f64 {
    let w = img.width();
    let h = img.height();
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let v00 = img.get(x0, y0) as f64;
    let v10 = img.get(x1, y0) as f64;
    let v01 = img.get(x0, y1) as f64;
    let v11 = img.get(x1, y1) as f64;
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Generator parameters, all at full resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub section_size: usize,
    /// Dark blob keypoints per pixel of area.
    pub keypoint_density: f64,
    /// Elongated dark curves.
    pub membrane_count: usize,
    /// Periodic grating patches (match-ambiguity traps).
    pub stripe_patches: usize,
    /// Smooth bright low-texture regions.
    pub body_count: usize,
    /// Maximum warp magnitude added per section, in pixels.
    pub deformation: f64,
    /// Amplitude of the additive low-frequency brightness field.
    pub brightness_amp: f64,
    pub occlusion_count: usize,
    pub occlusion_size: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SynthSpec {
    /// Desk-scale benchmark sections.
    pub fn desk() -> Self {
        Self {
            section_size: 1792,
            keypoint_density: 4.0e-4,
            membrane_count: 30,
            stripe_patches: 6,
            body_count: 8,
            deformation: 14.0,
            brightness_amp: 0.12,
            occlusion_count: 4,
            occlusion_size: 180,
            noise_sigma: 0.025,
        }
    }

    /// Defect-free variant (still deformed); used for generator sanity
    /// floors.
    pub fn clean(mut self) -> Self {
        self.brightness_amp = 0.0;
        self.occlusion_count = 0;
        self.noise_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.section_size < 64 {
            return Err(Error::InvalidArgument(
                "section_size must be >= 64".into(),
            ));
        }
        if self.deformation < 0.0 || self.noise_sigma < 0.0 || self.brightness_amp < 0.0 {
            return Err(Error::InvalidArgument(
                "deformation, noise_sigma, brightness_amp must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Sections plus the warp fields that produced them.
#[derive(Debug, Clone)]
pub struct SynthStack {
    pub spec: SynthSpec,
    pub seed: u64,
    pub sections: Vec<Raster>,
    /// Absolute (cumulative) warp per section; section k samples the base
    /// texture at p + warp_k(p).
    pub warps: Vec<WarpField>,
}

/// Generates `n_sections` sections. Section 0 carries the zero warp;
/// each later section adds a fresh smooth increment, so next-nearest
/// pairs accumulate roughly double the deformation of adjacent pairs.
pub fn generate_stack(spec: &SynthSpec, n_sections: usize, seed: u64) -> Result<SynthStack> {
    spec.validate()?;
    if n_sections == 0 {
        return Err(Error::InvalidArgument("n_sections must be >= 1".into()));
    }
    let n = spec.section_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let base = base_texture(spec, &mut rng);

    let mut warps = Vec::with_capacity(n_sections);
    warps.push(WarpField::zero(n, n));
    for k in 1..n_sections {
        let increment = smooth_field(n, n, spec.deformation, &mut rng);
        let prev = &warps[k - 1];
        let dx = Raster::from_fn(n, n, |x, y| prev.dx.get(x, y) + increment.dx.get(x, y));
        let dy = Raster::from_fn(n, n, |x, y| prev.dy.get(x, y) + increment.dy.get(x, y));
        warps.push(WarpField { dx, dy });
    }

    let mut sections = Vec::with_capacity(n_sections);
    for warp in warps.iter() {
        sections.push(render_section(spec, &base, warp, &mut rng));
    }

    Ok(SynthStack {
        spec: spec.clone(),
        seed,
        sections,
        warps,
    })
}

/// Solves for the source-section point carrying the same base content as
/// `point` in the template section: q with q + w_src(q) = p + w_tpl(p).
/// Returns q - p, the expected match displacement at full resolution.
pub fn truth_displacement(
    tpl_warp: &WarpField,
    src_warp: &WarpField,
    point: (f64, f64),
) -> (f64, f64) {
    let (px, py) = point;
    let (tx, ty) = tpl_warp.sample(px, py);
    let target = (px + tx, py + ty);
    let mut q = (px, py);
    for _ in 0..30 {
        let (sx, sy) = src_warp.sample(q.0, q.1);
        let next = (target.0 - sx, target.1 - sy);
        let change = (next.0 - q.0).abs().max((next.1 - q.1).abs());
        q = next;
        if change < 1e-9 {
            break;
        }
    }
    (q.0 - px, q.1 - py)
}

/// Smooth random field with maximum magnitude `magnitude`, built by
/// bilinear interpolation of a coarse grid of random offsets.
fn smooth_field(width: usize, height: usize, magnitude: f64, rng: &mut ChaCha8Rng) -> WarpField {
    const COARSE: usize = 9;
    let mut cx = [[0.0f64; COARSE]; COARSE];
    let mut cy = [[0.0f64; COARSE]; COARSE];
    let mut max_mag: f64 = 0.0;
    for row in 0..COARSE {
        for col in 0..COARSE {
            let vx = rng.gen_range(-1.0..1.0);
            let vy = rng.gen_range(-1.0..1.0);
            cx[row][col] = vx;
            cy[row][col] = vy;
            max_mag = max_mag.max((vx * vx + vy * vy).sqrt());
        }
    }
    let scale = if max_mag > 0.0 { magnitude / max_mag } else { 0.0 };
    let sample = |grid: &[[f64; COARSE]; COARSE], x: usize, y: usize| -> f32 {
        let gx = x as f64 / (width - 1) as f64 * (COARSE - 1) as f64;
        let gy = y as f64 / (height - 1) as f64 * (COARSE - 1) as f64;
        let x0 = (gx.floor() as usize).min(COARSE - 2);
        let y0 = (gy.floor() as usize).min(COARSE - 2);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let v = grid[y0][x0] * (1.0 - fx) * (1.0 - fy)
            + grid[y0][x0 + 1] * fx * (1.0 - fy)
            + grid[y0 + 1][x0] * (1.0 - fx) * fy
            + grid[y0 + 1][x0 + 1] * fx * fy;
        (v * scale) as f32
    };
    WarpField {
        dx: Raster::from_fn(width, height, |x, y| sample(&cx, x, y)),
        dy: Raster::from_fn(width, height, |x, y| sample(&cy, x, y)),
    }
}

fn base_texture(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = spec.section_size;
    let mut img = vec![0.55f32; n * n];

    // gentle large-scale background variation
    let mut waves = Vec::new();
    for _ in 0..3 {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let wavelength = rng.gen_range(n as f64 / 8.0..n as f64 / 3.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        waves.push((theta.cos() / wavelength, theta.sin() / wavelength, phase));
    }
    for y in 0..n {
        for x in 0..n {
            let mut v = 0.0;
            for &(kx, ky, phase) in &waves {
                v += 0.04
                    * (std::f64::consts::TAU * (kx * x as f64 + ky * y as f64) + phase).sin();
            }
            img[y * n + x] += v as f32;
        }
    }

    // bright smooth body regions with soft edges
    for _ in 0..spec.body_count {
        let cx = rng.gen_range(0.0..n as f64);
        let cy = rng.gen_range(0.0..n as f64);
        let rx = rng.gen_range(n as f64 / 24.0..n as f64 / 9.0);
        let ry = rng.gen_range(n as f64 / 24.0..n as f64 / 9.0);
        let value = rng.gen_range(0.72..0.82) as f32;
        stamp_ellipse(&mut img, n, cx, cy, rx, ry, value);
    }

    // periodic grating patches
    for _ in 0..spec.stripe_patches {
        let w = rng.gen_range(n / 12..n / 6);
        let h = rng.gen_range(n / 12..n / 6);
        let x0 = rng.gen_range(0..n - w);
        let y0 = rng.gen_range(0..n - h);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let period = rng.gen_range(18.0..30.0);
        let (kx, ky) = (theta.cos() / period, theta.sin() / period);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let s = (std::f64::consts::TAU * (kx * x as f64 + ky * y as f64) + phase).sin();
                img[y * n + x] = 0.5 + 0.22 * s as f32;
            }
        }
    }

    // membrane-like dark curves
    for _ in 0..spec.membrane_count {
        let mut x = rng.gen_range(0.0..n as f64);
        let mut y = rng.gen_range(0.0..n as f64);
        let mut theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let steps = rng.gen_range(n / 4..n);
        for _ in 0..steps {
            theta += rng.gen_range(-0.08..0.08);
            x += 2.0 * theta.cos();
            y += 2.0 * theta.sin();
            if x < 2.0 || y < 2.0 || x >= (n - 2) as f64 || y >= (n - 2) as f64 {
                break;
            }
            stamp_blob(&mut img, n, x, y, 1.6, -0.3);
        }
    }

    // dark blob keypoints
    let blob_count = (spec.keypoint_density * (n * n) as f64).round() as usize;
    for _ in 0..blob_count {
        let x = rng.gen_range(0.0..n as f64);
        let y = rng.gen_range(0.0..n as f64);
        let radius = rng.gen_range(4.0..9.0);
        let depth = rng.gen_range(-0.5..-0.35);
        stamp_blob(&mut img, n, x, y, radius / 2.0, depth);
    }

    for v in &mut img {
        *v = v.clamp(0.05, 0.95);
    }
    img
}

fn stamp_blob(img: &mut [f32], n: usize, cx: f64, cy: f64, sigma: f64, depth: f64) {
    let r = (3.0 * sigma).ceil() as isize;
    let x0 = (cx.round() as isize - r).max(0);
    let x1 = (cx.round() as isize + r).min(n as isize - 1);
    let y0 = (cy.round() as isize - r).max(0);
    let y1 = (cy.round() as isize + r).min(n as isize - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let g = depth * (-d2 / (2.0 * sigma * sigma)).exp();
            img[y as usize * n + x as usize] += g as f32;
        }
    }
}

fn stamp_ellipse(img: &mut [f32], n: usize, cx: f64, cy: f64, rx: f64, ry: f64, value: f32) {
    let x0 = ((cx - rx).floor() as isize).max(0);
    let x1 = ((cx + rx).ceil() as isize).min(n as isize - 1);
    let y0 = ((cy - ry).floor() as isize).max(0);
    let y1 = ((cy + ry).ceil() as isize).min(n as isize - 1);
    let edge = 4.0; // soft-edge width in pixels
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
            // radial distance from the ellipse boundary, approximately
            let radial = (1.0 - d.sqrt()) * rx.min(ry);
            if radial <= -edge {
                continue;
            }
            let t = ((radial + edge) / (2.0 * edge)).clamp(0.0, 1.0);
            let blend = t * t * (3.0 - 2.0 * t);
            let i = y as usize * n + x as usize;
            img[i] = img[i] * (1.0 - blend as f32) + value * blend as f32;
        }
    }
}

fn render_section(
    spec: &SynthSpec,
    base: &[f32],
    warp: &WarpField,
    rng: &mut ChaCha8Rng,
) -> Raster {
    let n = spec.section_size;

    // additive brightness field: a ramp plus one low-frequency wave
    let gx = rng.gen_range(-1.0..1.0) * spec.brightness_amp;
    let gy = rng.gen_range(-1.0..1.0) * spec.brightness_amp;
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let wavelength = rng.gen_range(n as f64 / 4.0..n as f64 / 2.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let (wx, wy) = (theta.cos() / wavelength, theta.sin() / wavelength);
    let wave_amp = rng.gen_range(0.3..1.0) * spec.brightness_amp;

    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).unwrap())
    } else {
        None
    };

    let sample_base = |x: f64, y: f64| -> f64 {
        let xc = x.clamp(0.0, (n - 1) as f64);
        let yc = y.clamp(0.0, (n - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(n - 1);
        let y1 = (y0 + 1).min(n - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        base[y0 * n + x0] as f64 * (1.0 - fx) * (1.0 - fy)
            + base[y0 * n + x1] as f64 * fx * (1.0 - fy)
            + base[y1 * n + x0] as f64 * (1.0 - fx) * fy
            + base[y1 * n + x1] as f64 * fx * fy
    };

    let mut data = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (
                warp.dx.get(x, y) as f64,
                warp.dy.get(x, y) as f64,
            );
            let mut v = sample_base(x as f64 + dx, y as f64 + dy);
            v += gx * (x as f64 / n as f64 - 0.5)
                + gy * (y as f64 / n as f64 - 0.5)
                + wave_amp
                    * (std::f64::consts::TAU * (wx * x as f64 + wy * y as f64) + phase).sin();
            if let Some(dist) = &noise {
                v += dist.sample(rng);
            }
            data[y * n + x] = (v as f32).clamp(0.0, 1.0);
        }
    }

    // occlusion patches replace content with near-constant fill
    for _ in 0..spec.occlusion_count {
        let w = rng.gen_range(spec.occlusion_size / 2..=spec.occlusion_size * 3 / 2).min(n - 1);
        let h = rng.gen_range(spec.occlusion_size / 2..=spec.occlusion_size * 3 / 2).min(n - 1);
        let x0 = rng.gen_range(0..n - w);
        let y0 = rng.gen_range(0..n - h);
        let fill: f32 = if rng.gen_bool(0.5) { 0.92 } else { 0.08 };
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let mut v = fill;
                if let Some(dist) = &noise {
                    v += dist.sample(rng) as f32;
                }
                data[y * n + x] = v.clamp(0.0, 1.0);
            }
        }
    }

    Raster::new(n, n, data).expect("generated section is well-formed")
}


/// Builds the trainer's aligned-pair dataset from a stack: every adjacent
/// section pair, downsampled by `factor`.
pub fn training_dataset(stack: &SynthStack, factor: usize) -> Result<crate::trainer::PairDataset> {
    if stack.sections.len() < 2 {
        return Err(Error::InvalidArgument(
            "training needs at least two sections".into(),
        ));
    }
    let small: Vec<Raster> = stack
        .sections
        .iter()
        .map(|s| crate::downsample(s, factor))
        .collect::<Result<_>>()?;
    let pairs = small
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect();
    Ok(crate::trainer::PairDataset { pairs })
}
