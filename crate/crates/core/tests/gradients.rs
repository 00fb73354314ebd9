//! Finite-difference verification of the analytic gradients: correlogram
//! entries with respect to pixels, and the full network -> NCC -> loss
//! chain with respect to parameters.

use corrgap::convnet::{self, NetConfig};
use corrgap::ncc::{ncc_fft_plane, peak_gradient_plane};
use corrgap::trainer::{gap_loss_plane, pair_gradients, PairMode};
use corrgap::Plane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Plane {
    Plane::from_vec(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect())
}

/// r at one placement, recomputed from scratch in f64.
fn r_at(template: &Plane, source: &Plane, u: usize, v: usize) -> f64 {
    let (tw, th) = (template.width(), template.height());
    let n = (tw * th) as f64;
    let mut window = Vec::with_capacity(tw * th);
    for dy in 0..th {
        window.extend_from_slice(&source.row(v + dy)[u..u + tw]);
    }
    let t_mean = template.data().iter().sum::<f64>() / n;
    let w_mean = window.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut tv = 0.0;
    let mut wv = 0.0;
    for (t, w) in template.data().iter().zip(&window) {
        let a = t - t_mean;
        let b = w - w_mean;
        num += a * b;
        tv += a * a;
        wv += b * b;
    }
    num / (tv * wv).sqrt()
}

#[test]
fn peak_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let h = 1e-3;
    for instance in 0..50 {
        let template = random_plane(&mut rng, 8, 8);
        let source = random_plane(&mut rng, 16, 16);
        let loc = (rng.gen_range(0..9), rng.gen_range(0..9));
        let grad = peak_gradient_plane(&template, &source, loc).unwrap();
        assert!(!grad.zero_variance);

        // every 4th template pixel, to keep 50 instances fast
        for j in (0..64).step_by(4) {
            let mut tp = template.clone();
            tp.data_mut()[j] += h;
            let mut tm = template.clone();
            tm.data_mut()[j] -= h;
            let fd = (r_at(&tp, &source, loc.0, loc.1) - r_at(&tm, &source, loc.0, loc.1))
                / (2.0 * h);
            let an = grad.grad_template.data()[j];
            let denom = fd.abs().max(an.abs()).max(1e-10);
            assert!(
                (fd - an).abs() / denom <= 1e-4,
                "instance {instance} template pixel {j}: fd {fd} vs analytic {an}"
            );
        }

        // a band of source pixels inside and outside the window
        for j in (0..256).step_by(13) {
            let (x, y) = (j % 16, j / 16);
            let inside =
                x >= loc.0 && x < loc.0 + 8 && y >= loc.1 && y < loc.1 + 8;
            let an = grad.grad_source.get(x, y);
            if !inside {
                assert_eq!(an, 0.0, "gradient outside the window must vanish");
                continue;
            }
            let mut sp = source.clone();
            sp.data_mut()[j] += h;
            let mut sm = source.clone();
            sm.data_mut()[j] -= h;
            let fd = (r_at(&template, &sp, loc.0, loc.1) - r_at(&template, &sm, loc.0, loc.1))
                / (2.0 * h);
            let denom = fd.abs().max(an.abs()).max(1e-10);
            assert!(
                (fd - an).abs() / denom <= 1e-4,
                "instance {instance} source pixel ({x},{y}): fd {fd} vs analytic {an}"
            );
        }
    }
}

fn chain_loss(params: &convnet::NetParams, template: &Plane, source: &Plane, excl: usize) -> f64 {
    let (t, _) = convnet::forward_plane(params, template).unwrap();
    let (s, _) = convnet::forward_plane(params, source).unwrap();
    let corr = ncc_fft_plane(&t, &s).unwrap();
    gap_loss_plane(&corr, excl).unwrap().0
}

#[test]
fn full_chain_gradient_matches_finite_differences() {
    // net -> NCC -> gap loss on an 8x8 template and 16x16 source, with a
    // single-level net; rel. error <= 1e-3 in double precision
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = NetConfig {
        levels: 1,
        base_channels: 2,
        seed: 21,
        ..NetConfig::default()
    };
    let params = convnet::init(&cfg).unwrap();
    let template = random_plane(&mut rng, 8, 8);
    let source = random_plane(&mut rng, 16, 16);
    let excl = 3;

    let analytic = pair_gradients(&params, &template, &source, excl, PairMode::Similar)
        .unwrap()
        .grads;

    let h = 1e-4;
    let mut checked = 0usize;
    for li in 0..params.layers.len() {
        let n_weights = params.layers[li].weights.len();
        for wi in (0..n_weights).step_by(7) {
            let mut pp = params.clone();
            pp.layers[li].weights[wi] += h;
            let mut pm = params.clone();
            pm.layers[li].weights[wi] -= h;
            let fd = (chain_loss(&pp, &template, &source, excl)
                - chain_loss(&pm, &template, &source, excl))
                / (2.0 * h);
            let an = analytic.layers[li].weights[wi];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom <= 1e-3,
                "layer {li} weight {wi}: fd {fd} vs analytic {an}"
            );
            checked += 1;
        }
        for bi in 0..params.layers[li].bias.len() {
            let mut pp = params.clone();
            pp.layers[li].bias[bi] += h;
            let mut pm = params.clone();
            pm.layers[li].bias[bi] -= h;
            let fd = (chain_loss(&pp, &template, &source, excl)
                - chain_loss(&pm, &template, &source, excl))
                / (2.0 * h);
            let an = analytic.layers[li].bias[bi];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom <= 1e-3,
                "layer {li} bias {bi}: fd {fd} vs analytic {an}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 30, "checked only {checked} parameters");
}

#[test]
fn convnet_backward_holds_across_seeds() {
    // spot finite-difference check over many random initializations
    for seed in 0..20u64 {
        let cfg = NetConfig {
            levels: 1,
            base_channels: 2,
            seed,
            ..NetConfig::default()
        };
        let params = convnet::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let img = random_plane(&mut rng, 8, 8);
        let gout = Plane::from_vec(8, 8, (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect());

        let (_, acts) = convnet::forward_plane(&params, &img).unwrap();
        let (grads, _) = convnet::backward(&params, &acts, &gout).unwrap();

        let loss = |p: &convnet::NetParams| -> f64 {
            let (out, _) = convnet::forward_plane(p, &img).unwrap();
            out.data().iter().zip(gout.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let li = (seed as usize) % params.layers.len();
        let wi = (seed as usize * 13) % params.layers[li].weights.len();
        let mut pp = params.clone();
        pp.layers[li].weights[wi] += h;
        let mut pm = params.clone();
        pm.layers[li].weights[wi] -= h;
        let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
        let an = grads.layers[li].weights[wi];
        let denom = fd.abs().max(an.abs()).max(1e-8);
        assert!(
            (fd - an).abs() / denom <= 1e-4,
            "seed {seed}: fd {fd} vs analytic {an}"
        );
    }
}
