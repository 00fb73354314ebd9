//! Forward pass, exact backward pass, and tiled full-image application.

use crate::{Error, Plane, Raster, Result};

use super::ops::{
    add, conv3x3, conv3x3_backward, maxpool2, maxpool2_backward, tanh_backward, tanh_forward,
    upsample2, upsample2_backward, ConvLayer, Feature,
};
use super::{dec_res_idx, dec_up_idx, enc_in_idx, enc_res_idx, final_idx, NetParams};

/// Per-layer values cached by [`forward_plane`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Normalized (2x-1) single-channel input.
    input: Feature,
    /// tanh outputs of encoder entry convs, per level.
    enc_in_out: Vec<Feature>,
    /// Residual-block caches per encoder level.
    enc_res: Vec<ResCache>,
    /// Pooled features feeding the next level (levels 0..L-1).
    enc_pooled: Vec<Feature>,
    /// Argmax codes of each pool.
    pool_idx: Vec<Vec<u8>>,
    /// Decoder caches in processing order (level L-2 down to 0).
    dec_upsampled: Vec<Feature>,
    dec_up_out: Vec<Feature>,
    dec_sum: Vec<Feature>,
    dec_res: Vec<ResCache>,
    /// Double-precision network output.
    pub output: Plane,
}

#[derive(Debug, Clone)]
struct ResCache {
    y1: Feature,
    y2: Feature,
    y3: Feature,
}

fn res_forward(c1: &ConvLayer, c2: &ConvLayer, c3: &ConvLayer, x: &Feature) -> ResCache {
    let y1 = tanh_forward(conv3x3(c1, x));
    let y2 = tanh_forward(conv3x3(c2, &y1));
    let pre3 = add(&conv3x3(c3, &y2), &y1);
    let y3 = tanh_forward(pre3);
    ResCache { y1, y2, y3 }
}

/// Returns the gradient with respect to the block input; accumulates the
/// three conv gradients into `grads`.
fn res_backward(
    c1: &ConvLayer,
    c2: &ConvLayer,
    c3: &ConvLayer,
    grads: &mut [ConvLayer],
    idx: (usize, usize, usize),
    cache: &ResCache,
    block_input: &Feature,
    grad_y3: &Feature,
) -> Feature {
    let gpre3 = tanh_backward(&cache.y3, grad_y3);
    let (gc3, gy2) = conv3x3_backward(c3, &cache.y2, &gpre3);
    accumulate(&mut grads[idx.2], &gc3);
    let gpre2 = tanh_backward(&cache.y2, &gy2);
    let (gc2, gy1_conv) = conv3x3_backward(c2, &cache.y1, &gpre2);
    accumulate(&mut grads[idx.1], &gc2);
    // skip connection: first layer's output also feeds the last layer's
    // pre-activation directly
    let gy1 = add(&gy1_conv, &gpre3);
    let gpre1 = tanh_backward(&cache.y1, &gy1);
    let (gc1, gx) = conv3x3_backward(c1, block_input, &gpre1);
    accumulate(&mut grads[idx.0], &gc1);
    gx
}

fn accumulate(into: &mut ConvLayer, from: &ConvLayer) {
    for (a, b) in into.weights.iter_mut().zip(&from.weights) {
        *a += b;
    }
    for (a, b) in into.bias.iter_mut().zip(&from.bias) {
        *a += b;
    }
}

fn check_input_dims(params: &NetParams, w: usize, h: usize) -> Result<()> {
    let m = params.config.dim_multiple();
    if w % m != 0 || h % m != 0 {
        return Err(Error::Shape(format!(
            "input {w}x{h} must have dimensions divisible by {m} for {} levels",
            params.config.levels
        )));
    }
    Ok(())
}

/// Runs the network on a raster; the output raster has the input's
/// dimensions.
pub fn forward(params: &NetParams, img: &Raster) -> Result<(Raster, Activations)> {
    let (out, acts) = forward_plane(params, &Plane::from_raster(img))?;
    Ok((out.to_raster(), acts))
}

/// Double-precision forward pass. Input intensities (nominally [0,1]) are
/// mapped to [-1,1] before the first convolution.
pub fn forward_plane(params: &NetParams, img: &Plane) -> Result<(Plane, Activations)> {
    check_input_dims(params, img.width(), img.height())?;
    let levels = params.config.levels;
    let layers = &params.layers;

    let input = Feature {
        ch: 1,
        h: img.height(),
        w: img.width(),
        data: img.data().iter().map(|&v| 2.0 * v - 1.0).collect(),
    };

    let mut enc_in_out = Vec::with_capacity(levels);
    let mut enc_res: Vec<ResCache> = Vec::with_capacity(levels);
    let mut enc_pooled = Vec::with_capacity(levels.saturating_sub(1));
    let mut pool_idx = Vec::with_capacity(levels.saturating_sub(1));

    for k in 0..levels {
        let x = if k == 0 {
            &input
        } else {
            enc_pooled.last().unwrap()
        };
        let a = tanh_forward(conv3x3(&layers[enc_in_idx(k)], x));
        let res = res_forward(
            &layers[enc_res_idx(k, 0)],
            &layers[enc_res_idx(k, 1)],
            &layers[enc_res_idx(k, 2)],
            &a,
        );
        enc_in_out.push(a);
        if k < levels - 1 {
            let (pooled, idx) = maxpool2(&res.y3);
            enc_pooled.push(pooled);
            pool_idx.push(idx);
        }
        enc_res.push(res);
    }

    let mut dec_upsampled = Vec::new();
    let mut dec_up_out = Vec::new();
    let mut dec_sum = Vec::new();
    let mut dec_res: Vec<ResCache> = Vec::new();

    let mut cur = enc_res[levels - 1].y3.clone();
    for k in (0..levels.saturating_sub(1)).rev() {
        let up = upsample2(&cur);
        let base = dec_up_idx(levels, k);
        let d = tanh_forward(conv3x3(&layers[base], &up));
        let s = add(&d, &enc_res[k].y3);
        let res = res_forward(
            &layers[dec_res_idx(levels, k, 0)],
            &layers[dec_res_idx(levels, k, 1)],
            &layers[dec_res_idx(levels, k, 2)],
            &s,
        );
        cur = res.y3.clone();
        dec_upsampled.push(up);
        dec_up_out.push(d);
        dec_sum.push(s);
        dec_res.push(res);
    }

    let out_feature = conv3x3(&layers[final_idx(levels)], &cur);
    let output = Plane::from_vec(out_feature.w, out_feature.h, out_feature.data);

    Ok((
        output.clone(),
        Activations {
            input,
            enc_in_out,
            enc_res,
            enc_pooled,
            pool_idx,
            dec_upsampled,
            dec_up_out,
            dec_sum,
            dec_res,
            output,
        },
    ))
}

/// Exact gradients of the scalar loss whose output-gradient is
/// `grad_out`, with respect to every parameter and the raster-space
/// input.
pub fn backward(
    params: &NetParams,
    acts: &Activations,
    grad_out: &Plane,
) -> Result<(NetParams, Plane)> {
    if grad_out.width() != acts.output.width() || grad_out.height() != acts.output.height() {
        return Err(Error::Shape(format!(
            "grad_out {}x{} does not match output {}x{}",
            grad_out.width(),
            grad_out.height(),
            acts.output.width(),
            acts.output.height()
        )));
    }
    let levels = params.config.levels;
    let layers = &params.layers;
    let mut grads = NetParams::zeros(&params.config)?;

    let g_out = Feature {
        ch: 1,
        h: grad_out.height(),
        w: grad_out.width(),
        data: grad_out.data().to_vec(),
    };

    // final conv (linear)
    let final_in = if levels > 1 {
        &acts.dec_res.last().unwrap().y3
    } else {
        &acts.enc_res[0].y3
    };
    let (gc, mut gcur) = conv3x3_backward(&layers[final_idx(levels)], final_in, &g_out);
    accumulate(&mut grads.layers[final_idx(levels)], &gc);

    // gradient arriving at each encoder level's residual output
    let mut genc: Vec<Option<Feature>> = vec![None; levels];

    // decoder backward: processing order was k = L-2..0, so walk the
    // caches from the back
    for (pos, k) in (0..levels.saturating_sub(1)).rev().enumerate().rev() {
        let base = dec_up_idx(levels, k);
        let ridx = (
            dec_res_idx(levels, k, 0),
            dec_res_idx(levels, k, 1),
            dec_res_idx(levels, k, 2),
        );
        let gs = res_backward(
            &layers[ridx.0],
            &layers[ridx.1],
            &layers[ridx.2],
            &mut grads.layers,
            ridx,
            &acts.dec_res[pos],
            &acts.dec_sum[pos],
            &gcur,
        );
        // the sum passes the gradient to both the decoder path and the
        // encoder skip
        match &mut genc[k] {
            Some(g) => *g = add(g, &gs),
            slot => *slot = Some(gs.clone()),
        }
        let gpre = tanh_backward(&acts.dec_up_out[pos], &gs);
        let (gc, gup) = conv3x3_backward(&layers[base], &acts.dec_upsampled[pos], &gpre);
        accumulate(&mut grads.layers[base], &gc);
        gcur = upsample2_backward(&gup);
    }

    // gcur now addresses the bottleneck residual output
    match &mut genc[levels - 1] {
        Some(g) => *g = add(g, &gcur),
        slot => *slot = Some(gcur),
    }

    let mut grad_input = None;
    for k in (0..levels).rev() {
        let g = genc[k].take().expect("encoder gradient populated");
        let block_input = &acts.enc_in_out[k];
        let base = enc_in_idx(k);
        let ridx = (
            enc_res_idx(k, 0),
            enc_res_idx(k, 1),
            enc_res_idx(k, 2),
        );
        let ga = res_backward(
            &layers[ridx.0],
            &layers[ridx.1],
            &layers[ridx.2],
            &mut grads.layers,
            ridx,
            &acts.enc_res[k],
            block_input,
            &g,
        );
        let gpre = tanh_backward(&acts.enc_in_out[k], &ga);
        let conv_input = if k == 0 {
            &acts.input
        } else {
            &acts.enc_pooled[k - 1]
        };
        let (gc, gin) = conv3x3_backward(&layers[base], conv_input, &gpre);
        accumulate(&mut grads.layers[base], &gc);
        if k == 0 {
            grad_input = Some(gin);
        } else {
            let gpool = maxpool2_backward(&gin, &acts.pool_idx[k - 1]);
            genc[k - 1] = Some(match genc[k - 1].take() {
                Some(g) => add(&g, &gpool),
                None => gpool,
            });
        }
    }

    // chain through the [0,1] -> [-1,1] input mapping
    let gin = grad_input.expect("input gradient populated");
    let grad_raster = Plane::from_vec(gin.w, gin.h, gin.data.iter().map(|&v| 2.0 * v).collect());
    Ok((grads, grad_raster))
}

/// Applies the network across an image larger than one tile, linearly
/// blending tile outputs in the overlap bands.
///
/// Tiles are `tile` x `tile` (which must satisfy the level divisibility);
/// an image no larger than one tile is forwarded whole and must itself be
/// divisible.
pub fn apply_full_image(
    params: &NetParams,
    img: &Raster,
    tile: usize,
    overlap: usize,
) -> Result<Raster> {
    let m = params.config.dim_multiple();
    if tile % m != 0 {
        return Err(Error::Shape(format!(
            "tile {tile} must be divisible by {m}"
        )));
    }
    if overlap >= tile / 2 {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be < tile/2 = {}",
            tile / 2
        )));
    }
    let (w, h) = (img.width(), img.height());
    if w <= tile && h <= tile {
        return Ok(forward(params, img)?.0);
    }
    if w < tile || h < tile {
        return Err(Error::Shape(format!(
            "image {w}x{h} is narrower than one {tile}px tile in one dimension"
        )));
    }

    let origins = |extent: usize| -> Vec<usize> {
        let stride = tile - overlap;
        let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + tile < extent).collect();
        v.push(extent - tile);
        v
    };

    // triangular taper over the overlap band at each tile edge
    let ramp = (overlap + 1) as f64;
    let profile: Vec<f64> = (0..tile)
        .map(|t| (((t + 1).min(tile - t)) as f64 / ramp).min(1.0))
        .collect();

    let mut acc = vec![0.0f64; w * h];
    let mut wsum = vec![0.0f64; w * h];
    for &oy in &origins(h) {
        for &ox in &origins(w) {
            let patch = crate::raster::crop(
                img,
                crate::PatchSpec {
                    x: ox,
                    y: oy,
                    size: tile,
                },
            )?;
            let (out, _) = forward(params, &patch)?;
            for ty in 0..tile {
                let wy = profile[ty];
                let row = out.row(ty);
                for tx in 0..tile {
                    let weight = wy * profile[tx];
                    let i = (oy + ty) * w + (ox + tx);
                    acc[i] += weight * row[tx] as f64;
                    wsum[i] += weight;
                }
            }
        }
    }
    let data: Vec<f32> = acc
        .iter()
        .zip(&wsum)
        .map(|(&a, &s)| (a / s) as f32)
        .collect();
    Raster::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::{init, NetConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(seed: u64, w: usize, h: usize) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.gen::<f32>())
    }

    #[test]
    fn zero_params_give_zero_output() {
        let cfg = NetConfig {
            levels: 2,
            base_channels: 2,
            seed: 0,
            ..NetConfig::default()
        };
        let params = NetParams::zeros(&cfg).unwrap();
        let img = random_raster(5, 16, 16);
        let (out, _) = forward(&params, &img).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_dims_match_input_dims() {
        let params = init(&NetConfig::default()).unwrap();
        for size in [64usize, 160] {
            let img = random_raster(size as u64, size, size);
            let (out, _) = forward(&params, &img).unwrap();
            assert_eq!((out.width(), out.height()), (size, size));
        }
    }

    #[test]
    fn indivisible_dims_error_names_required_multiple() {
        let params = init(&NetConfig::default()).unwrap();
        let img = random_raster(1, 34, 34);
        match forward(&params, &img) {
            Err(Error::Shape(msg)) => assert!(msg.contains("divisible by 4"), "{msg}"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = init(&NetConfig::default()).unwrap();
        let img = random_raster(2, 32, 32);
        let (a, _) = forward(&params, &img).unwrap();
        let (b, _) = forward(&params, &img).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn tanh_activations_stay_bounded() {
        let params = init(&NetConfig {
            levels: 2,
            base_channels: 4,
            seed: 3,
            ..NetConfig::default()
        })
        .unwrap();
        let img = random_raster(4, 24, 24);
        let (_, acts) = forward_plane(&params, &Plane::from_raster(&img)).unwrap();
        let check = |f: &Feature| {
            assert!(f.data.iter().all(|&v| v > -1.0 && v < 1.0));
        };
        for f in &acts.enc_in_out {
            check(f);
        }
        for r in acts.enc_res.iter().chain(&acts.dec_res) {
            check(&r.y1);
            check(&r.y2);
            check(&r.y3);
        }
        for f in &acts.dec_up_out {
            check(f);
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let params = init(&NetConfig {
            levels: 2,
            base_channels: 2,
            seed: 1,
            ..NetConfig::default()
        })
        .unwrap();
        let img = Plane::from_raster(&random_raster(6, 16, 16));
        let (_, acts) = forward_plane(&params, &img).unwrap();
        let gz = Plane::zeros(16, 16);
        let (grads, gin) = backward(&params, &acts, &gz).unwrap();
        let mut all_zero = true;
        grads.for_each_param(|v| all_zero &= v == 0.0);
        assert!(all_zero);
        assert!(gin.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences_on_tiny_net() {
        let cfg = NetConfig {
            levels: 1,
            base_channels: 2,
            seed: 11,
            ..NetConfig::default()
        };
        let params = init(&cfg).unwrap();
        let img = Plane::from_raster(&random_raster(7, 12, 12));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gout = Plane::from_vec(12, 12, (0..144).map(|_| rng.gen_range(-1.0..1.0)).collect());

        let loss = |p: &NetParams| -> f64 {
            let (out, _) = forward_plane(p, &img).unwrap();
            out.data().iter().zip(gout.data()).map(|(a, b)| a * b).sum()
        };

        let (_, acts) = forward_plane(&params, &img).unwrap();
        let (grads, _) = backward(&params, &acts, &gout).unwrap();

        let h = 1e-5;
        // probe a spread of parameters across all layers
        for li in 0..params.layers.len() {
            for wi in [0usize, 5, 13] {
                let wi = wi % params.layers[li].weights.len();
                let mut pp = params.clone();
                pp.layers[li].weights[wi] += h;
                let mut pm = params.clone();
                pm.layers[li].weights[wi] -= h;
                let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
                let an = grads.layers[li].weights[wi];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "layer {li} weight {wi}: fd {fd} vs analytic {an}"
                );
            }
            let mut pp = params.clone();
            pp.layers[li].bias[0] += h;
            let mut pm = params.clone();
            pm.layers[li].bias[0] -= h;
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
            let an = grads.layers[li].bias[0];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!((fd - an).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let cfg = NetConfig {
            levels: 2,
            base_channels: 2,
            seed: 12,
            ..NetConfig::default()
        };
        let params = init(&cfg).unwrap();
        let img = Plane::from_raster(&random_raster(9, 8, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let gout = Plane::from_vec(8, 8, (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect());

        let (_, acts) = forward_plane(&params, &img).unwrap();
        let (_, gin) = backward(&params, &acts, &gout).unwrap();

        let loss = |p: &Plane| -> f64 {
            let (out, _) = forward_plane(&params, p).unwrap();
            out.data().iter().zip(gout.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for j in [0usize, 17, 43, 63] {
            let mut ip = img.clone();
            ip.data_mut()[j] += h;
            let mut im = img.clone();
            im.data_mut()[j] -= h;
            let fd = (loss(&ip) - loss(&im)) / (2.0 * h);
            let an = gin.data()[j];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!((fd - an).abs() / denom < 1e-4, "pixel {j}: {fd} vs {an}");
        }
    }

    #[test]
    fn single_tile_image_equals_forward() {
        let params = init(&NetConfig {
            levels: 2,
            base_channels: 2,
            seed: 5,
            ..NetConfig::default()
        })
        .unwrap();
        let img = random_raster(20, 24, 24);
        let whole = forward(&params, &img).unwrap().0;
        let tiled = apply_full_image(&params, &img, 32, 8).unwrap();
        assert_eq!(whole.data(), tiled.data());
    }

    #[test]
    fn constant_output_net_blends_without_seams() {
        // bias-only final layer: output is constant regardless of input
        let cfg = NetConfig {
            levels: 2,
            base_channels: 2,
            seed: 0,
            ..NetConfig::default()
        };
        let mut params = NetParams::zeros(&cfg).unwrap();
        let fi = final_idx(cfg.levels);
        params.layers[fi].bias[0] = 0.37;
        let img = random_raster(21, 56, 40);
        let out = apply_full_image(&params, &img, 16, 4).unwrap();
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn tiled_interior_matches_whole_image() {
        // tile origins 0 and 40: the band [0,40) is covered by tile 0
        // alone, so pixels there that sit >= the receptive-field radius
        // (~17px for this net) from tile 0's edges see the exact
        // whole-image computation
        let params = init(&NetConfig {
            levels: 2,
            base_channels: 3,
            seed: 6,
            ..NetConfig::default()
        })
        .unwrap();
        let img = random_raster(22, 88, 88);
        let whole = forward(&params, &img).unwrap().0;
        let tiled = apply_full_image(&params, &img, 48, 8).unwrap();
        for y in 20..31 {
            for x in 20..31 {
                let a = whole.get(x, y);
                let b = tiled.get(x, y);
                assert!((a - b).abs() < 1e-4, "({x},{y}): {a} vs {b}");
            }
        }
    }
}
