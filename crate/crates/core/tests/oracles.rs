//! Reference-implementation checks: the direct correlogram against a
//! naive per-window Pearson computation, and the FFT route against the
//! direct route.

use corrgap::ncc::{ncc_direct, ncc_fft};
use corrgap::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_raster(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster {
    Raster::from_fn(w, h, |_, _| rng.gen::<f32>())
}

/// Scalar Pearson correlation computed from scratch for one window; no
/// shared code with the library routes.
fn naive_pearson(template: &Raster, source: &Raster, u: usize, v: usize) -> f64 {
    let (tw, th) = (template.width(), template.height());
    let n = (tw * th) as f64;
    let mut t_sum = 0.0f64;
    let mut w_sum = 0.0f64;
    for y in 0..th {
        for x in 0..tw {
            t_sum += template.get(x, y) as f64;
            w_sum += source.get(u + x, v + y) as f64;
        }
    }
    let t_mean = t_sum / n;
    let w_mean = w_sum / n;
    let mut num = 0.0f64;
    let mut t_var = 0.0f64;
    let mut w_var = 0.0f64;
    for y in 0..th {
        for x in 0..tw {
            let a = template.get(x, y) as f64 - t_mean;
            let b = source.get(u + x, v + y) as f64 - w_mean;
            num += a * b;
            t_var += a * a;
            w_var += b * b;
        }
    }
    if t_var <= 1e-12 || w_var <= 1e-12 {
        return 0.0;
    }
    num / (t_var * w_var).sqrt()
}

#[test]
fn direct_matches_naive_per_window_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..5 {
        let template = random_raster(&mut rng, 16, 16);
        let source = random_raster(&mut rng, 64, 64);
        let c = ncc_direct(&template, &source).unwrap();
        for v in 0..c.height() {
            for u in 0..c.width() {
                let expected = naive_pearson(&template, &source, u, v);
                let got = c.get(u, v) as f64;
                assert!(
                    (got - expected).abs() < 1e-6,
                    "({u},{v}): {got} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn fft_matches_direct_small_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for &(t, s) in &[(8usize, 32usize), (16, 64)] {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let template = random_raster(&mut rng, t, t);
            let source = random_raster(&mut rng, s, s);
            let a = ncc_direct(&template, &source).unwrap();
            let b = ncc_fft(&template, &source).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                worst = worst.max((x - y).abs() as f64);
            }
        }
        assert!(worst <= 1e-5, "size ({t},{s}) max abs diff {worst}");
    }
}

#[test]
fn fft_matches_direct_at_paper_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..2 {
        let template = random_raster(&mut rng, 160, 160);
        let source = random_raster(&mut rng, 512, 512);
        let a = ncc_direct(&template, &source).unwrap();
        let b = ncc_fft(&template, &source).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            worst = worst.max((x - y).abs() as f64);
        }
    }
    assert!(worst <= 1e-5, "max abs diff {worst}");
}

#[test]
fn fft_matches_direct_on_structured_content() {
    // correlated content with flat regions, not just white noise
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..20 {
        let phase: f64 = rng.gen_range(0.0..6.28);
        let source = Raster::from_fn(48, 48, |x, y| {
            let s = ((x as f64 / 5.0 + phase).sin() + (y as f64 / 7.0).cos()) * 0.25 + 0.5;
            s as f32
        });
        let template = corrgap::crop(&source, corrgap::PatchSpec { x: 10, y: 12, size: 12 }).unwrap();
        let a = ncc_direct(&template, &source).unwrap();
        let b = ncc_fft(&template, &source).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-5);
        }
        // the cropped-from location is the exact match
        let peaks = corrgap::ncc::analyze_peaks(&a, 1).unwrap();
        assert_eq!(peaks.primary_loc, (10, 12));
        assert!(peaks.r_max > 1.0 - 1e-6);
    }
}

#[test]
fn affine_intensity_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..10 {
        let template = random_raster(&mut rng, 12, 12);
        let source = random_raster(&mut rng, 40, 40);
        let base = ncc_fft(&template, &source).unwrap();

        let a: f32 = rng.gen_range(0.2..5.0);
        let b: f32 = rng.gen_range(-1.0..1.0);
        let t_scaled = Raster::from_fn(12, 12, |x, y| a * template.get(x, y) + b);
        let scaled = ncc_fft(&t_scaled, &source).unwrap();
        for (x, y) in base.values().iter().zip(scaled.values()) {
            assert!((x - y).abs() < 1e-6, "template affine changed r");
        }

        // negative scale flips the sign
        let t_neg = Raster::from_fn(12, 12, |x, y| -a * template.get(x, y) + b);
        let negated = ncc_fft(&t_neg, &source).unwrap();
        for (x, y) in base.values().iter().zip(negated.values()) {
            assert!((x + y).abs() < 1e-6, "negative scale should negate r");
        }

        // source-side affine with positive scale
        let c: f32 = rng.gen_range(0.2..5.0);
        let d: f32 = rng.gen_range(-0.5..0.5);
        let s_scaled = Raster::from_fn(40, 40, |x, y| c * source.get(x, y) + d);
        let s_aff = ncc_fft(&template, &s_scaled).unwrap();
        for (x, y) in base.values().iter().zip(s_aff.values()) {
            assert!((x - y).abs() < 1e-6, "source affine changed r");
        }
    }
}
