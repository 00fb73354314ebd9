//! Built-in oracle suites: FFT-vs-direct equivalence, gradient finite
//! differences, the Adam first-step identity, and file round-trips. Each
//! check prints its measured maximum error; any failure yields a nonzero
//! exit.

use std::process::ExitCode;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use corrgap::convnet::{self, NetConfig, NetParams};
use corrgap::ncc::{ncc_direct, ncc_fft, peak_gradient_plane};
use corrgap::trainer::{adam_step, pair_gradients, OptimState, PairMode};
use corrgap::{Plane, Raster};

struct Check {
    name: &'static str,
    max_error: f64,
    tolerance: f64,
}

pub fn run(tolerance_scale: f64) -> Result<ExitCode> {
    let mut checks = Vec::new();
    checks.push(fft_vs_direct()?);
    checks.push(peak_gradient_fd()?);
    checks.push(chain_gradient_fd()?);
    checks.push(adam_first_step()?);
    checks.push(f32_roundtrip()?);
    checks.push(pgm_roundtrip()?);

    let mut failed = false;
    for c in &checks {
        let tol = c.tolerance * tolerance_scale;
        let ok = c.max_error <= tol;
        failed |= !ok;
        println!(
            "check {:<22} max error {:.3e} (tolerance {:.1e}) ... {}",
            c.name,
            c.max_error,
            tol,
            if ok { "ok" } else { "FAIL" }
        );
    }
    Ok(if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn random_raster(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster {
    Raster::from_fn(w, h, |_, _| rng.gen::<f32>())
}

fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Plane {
    Plane::from_vec(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect())
}

fn fft_vs_direct() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_error = 0.0f64;
    let cases: &[(usize, usize, usize)] = &[(8, 32, 20), (16, 64, 10), (160, 512, 1)];
    for &(t, s, reps) in cases {
        for _ in 0..reps {
            let template = random_raster(&mut rng, t, t);
            let source = random_raster(&mut rng, s, s);
            let a = ncc_direct(&template, &source)?;
            let b = ncc_fft(&template, &source)?;
            for (x, y) in a.values().iter().zip(b.values()) {
                max_error = max_error.max((x - y).abs() as f64);
            }
        }
    }
    Ok(Check {
        name: "fft_vs_direct",
        max_error,
        tolerance: 1e-5,
    })
}

fn peak_gradient_fd() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-3;
    let mut max_error = 0.0f64;
    for _ in 0..5 {
        let template = random_plane(&mut rng, 8, 8);
        let source = random_plane(&mut rng, 16, 16);
        let loc = (rng.gen_range(0..9), rng.gen_range(0..9));
        let grad = peak_gradient_plane(&template, &source, loc)?;
        for j in (0..64).step_by(5) {
            let mut tp = template.clone();
            tp.data_mut()[j] += h;
            let mut tm = template.clone();
            tm.data_mut()[j] -= h;
            let rp = r_from_scratch(&tp, &source, loc);
            let rm = r_from_scratch(&tm, &source, loc);
            let fd = (rp - rm) / (2.0 * h);
            let an = grad.grad_template.data()[j];
            let denom = fd.abs().max(an.abs()).max(1e-10);
            max_error = max_error.max((fd - an).abs() / denom);
        }
    }
    Ok(Check {
        name: "peak_gradient_fd",
        max_error,
        tolerance: 1e-4,
    })
}

fn r_from_scratch(template: &Plane, source: &Plane, loc: (usize, usize)) -> f64 {
    let (tw, th) = (template.width(), template.height());
    let n = (tw * th) as f64;
    let mut window = Vec::with_capacity(tw * th);
    for dy in 0..th {
        window.extend_from_slice(&source.row(loc.1 + dy)[loc.0..loc.0 + tw]);
    }
    let tm = template.data().iter().sum::<f64>() / n;
    let wm = window.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut tv = 0.0;
    let mut wv = 0.0;
    for (t, w) in template.data().iter().zip(&window) {
        let a = t - tm;
        let b = w - wm;
        num += a * b;
        tv += a * a;
        wv += b * b;
    }
    num / (tv * wv).sqrt()
}

fn chain_gradient_fd() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = NetConfig {
        levels: 1,
        base_channels: 2,
        seed: 5,
        ..NetConfig::default()
    };
    let params = convnet::init(&cfg)?;
    let template = random_plane(&mut rng, 8, 8);
    let source = random_plane(&mut rng, 16, 16);
    let excl = 3;
    let analytic = pair_gradients(&params, &template, &source, excl, PairMode::Similar)?.grads;

    let loss = |p: &NetParams| -> Result<f64> {
        let (t, _) = convnet::forward_plane(p, &template)?;
        let (s, _) = convnet::forward_plane(p, &source)?;
        let corr = corrgap::ncc::ncc_fft_plane(&t, &s)?;
        Ok(corrgap::trainer::gap_loss_plane(&corr, excl)?.0)
    };

    let h = 1e-4;
    let mut max_error = 0.0f64;
    for li in 0..params.layers.len() {
        let wi = (li * 11) % params.layers[li].weights.len();
        let mut pp = params.clone();
        pp.layers[li].weights[wi] += h;
        let mut pm = params.clone();
        pm.layers[li].weights[wi] -= h;
        let fd = (loss(&pp)? - loss(&pm)?) / (2.0 * h);
        let an = analytic.layers[li].weights[wi];
        let denom = fd.abs().max(an.abs()).max(1e-8);
        max_error = max_error.max((fd - an).abs() / denom);
    }
    Ok(Check {
        name: "chain_gradient_fd",
        max_error,
        tolerance: 1e-3,
    })
}

fn adam_first_step() -> Result<Check> {
    let cfg = NetConfig {
        levels: 1,
        base_channels: 2,
        seed: 0,
        ..NetConfig::default()
    };
    let mut params = NetParams::zeros(&cfg)?;
    let mut grads = NetParams::zeros(&cfg)?;
    let mut expected = Vec::new();
    let mut i = 0u32;
    grads.for_each_param_mut(|v| {
        *v = ((i % 7) as f64 - 3.0) * 0.1;
        expected.push(*v);
        i += 1;
    });
    let mut state = OptimState::new(&cfg)?;
    let lr = 1e-3;
    adam_step(&mut params, &grads, &mut state, lr)?;
    let mut max_error = 0.0f64;
    let mut j = 0usize;
    params.for_each_param(|v| {
        let g = expected[j];
        if g != 0.0 {
            max_error = max_error.max((v + lr * g.signum()).abs() / lr);
        } else {
            max_error = max_error.max(v.abs() / lr);
        }
        j += 1;
    });
    Ok(Check {
        name: "adam_first_step",
        max_error,
        tolerance: 1e-6,
    })
}

fn scratch_dir() -> Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("corrgap_selfcheck_{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn f32_roundtrip() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_raster(&mut rng, 16, 16);
    let dir = scratch_dir()?;
    let path = dir.join("roundtrip.f32");
    corrgap::save_f32(&img, &path)?;
    let back = corrgap::load_f32(&path)?;
    let mut max_error = 0.0f64;
    for (a, b) in img.data().iter().zip(back.data()) {
        if a.to_bits() != b.to_bits() {
            max_error = 1.0;
        }
    }
    std::fs::remove_file(&path).ok();
    Ok(Check {
        name: "f32_roundtrip",
        max_error,
        tolerance: 0.5,
    })
}

fn pgm_roundtrip() -> Result<Check> {
    let img = Raster::from_fn(9, 7, |x, y| ((x * 37 + y * 11) % 256) as f32 / 255.0);
    let dir = scratch_dir()?;
    let path = dir.join("roundtrip.pgm");
    corrgap::save_pgm(&img, &path)?;
    let back = corrgap::load_pgm(&path)?;
    let mut max_error = 0.0f64;
    for (a, b) in img.data().iter().zip(back.data()) {
        max_error = max_error.max((a - b).abs() as f64);
    }
    std::fs::remove_file(&path).ok();
    std::fs::remove_dir(&dir).ok();
    Ok(Check {
        name: "pgm_roundtrip",
        max_error,
        tolerance: 1e-6,
    })
}
