//! Primitive layer operations on multi-channel feature maps, each with an
//! exact backward pass.

/// Channel-major feature map: `data[c * h * w + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub ch: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Feature {
    pub fn zeros(ch: usize, h: usize, w: usize) -> Self {
        Self {
            ch,
            h,
            w,
            data: vec![0.0; ch * h * w],
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }
}

/// One 3x3 convolution layer: weights `[out_ch][in_ch][3][3]`, one bias
/// per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weights: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Copies each channel into a zero-padded (h+2) x (w+2) buffer.
fn pad1(f: &Feature) -> Vec<f64> {
    let (h, w) = (f.h, f.w);
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; f.ch * ph * pw];
    for c in 0..f.ch {
        let src = f.plane(c);
        let dst = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for y in 0..h {
            dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    out
}

fn conv_padded_accumulate(out_plane: &mut [f64], padded: &[f64], k: &[f64], h: usize, w: usize) {
    let pw = w + 2;
    for y in 0..h {
        let r0 = &padded[y * pw..y * pw + w + 2];
        let r1 = &padded[(y + 1) * pw..(y + 1) * pw + w + 2];
        let r2 = &padded[(y + 2) * pw..(y + 2) * pw + w + 2];
        let orow = &mut out_plane[y * w..(y + 1) * w];
        for x in 0..w {
            orow[x] += k[0] * r0[x]
                + k[1] * r0[x + 1]
                + k[2] * r0[x + 2]
                + k[3] * r1[x]
                + k[4] * r1[x + 1]
                + k[5] * r1[x + 2]
                + k[6] * r2[x]
                + k[7] * r2[x + 1]
                + k[8] * r2[x + 2];
        }
    }
}

/// Zero-padded "same" 3x3 convolution.
pub fn conv3x3(layer: &ConvLayer, input: &Feature) -> Feature {
    debug_assert_eq!(layer.in_ch, input.ch);
    let (h, w) = (input.h, input.w);
    let padded = pad1(input);
    let pplane = (h + 2) * (w + 2);
    let mut out = Feature::zeros(layer.out_ch, h, w);
    for oc in 0..layer.out_ch {
        let out_plane = out.plane_mut(oc);
        out_plane.fill(layer.bias[oc]);
        for ic in 0..layer.in_ch {
            let k = &layer.weights[(oc * layer.in_ch + ic) * 9..(oc * layer.in_ch + ic) * 9 + 9];
            conv_padded_accumulate(out_plane, &padded[ic * pplane..(ic + 1) * pplane], k, h, w);
        }
    }
    out
}

/// Backward of [`conv3x3`]: gradients with respect to weights, bias, and
/// input, given the layer input and the output gradient.
pub fn conv3x3_backward(
    layer: &ConvLayer,
    input: &Feature,
    grad_out: &Feature,
) -> (ConvLayer, Feature) {
    debug_assert_eq!(grad_out.ch, layer.out_ch);
    debug_assert_eq!(input.ch, layer.in_ch);
    let (h, w) = (input.h, input.w);
    let pw = w + 2;
    let pplane = (h + 2) * pw;

    let mut grads = ConvLayer::zeros(layer.in_ch, layer.out_ch);

    let padded_in = pad1(input);
    for oc in 0..layer.out_ch {
        let go = grad_out.plane(oc);
        grads.bias[oc] = go.iter().sum();
        for ic in 0..layer.in_ch {
            let ip = &padded_in[ic * pplane..(ic + 1) * pplane];
            let mut acc = [0.0f64; 9];
            for y in 0..h {
                let go_row = &go[y * w..(y + 1) * w];
                let r0 = &ip[y * pw..y * pw + w + 2];
                let r1 = &ip[(y + 1) * pw..(y + 1) * pw + w + 2];
                let r2 = &ip[(y + 2) * pw..(y + 2) * pw + w + 2];
                for x in 0..w {
                    let g = go_row[x];
                    acc[0] += g * r0[x];
                    acc[1] += g * r0[x + 1];
                    acc[2] += g * r0[x + 2];
                    acc[3] += g * r1[x];
                    acc[4] += g * r1[x + 1];
                    acc[5] += g * r1[x + 2];
                    acc[6] += g * r2[x];
                    acc[7] += g * r2[x + 1];
                    acc[8] += g * r2[x + 2];
                }
            }
            let base = (oc * layer.in_ch + ic) * 9;
            grads.weights[base..base + 9].copy_from_slice(&acc);
        }
    }

    // grad wrt input: correlation of padded grad_out with the 180-rotated
    // kernels, summing over output channels
    let padded_go = pad1(grad_out);
    let mut grad_in = Feature::zeros(layer.in_ch, h, w);
    for ic in 0..layer.in_ch {
        let gplane = grad_in.plane_mut(ic);
        for oc in 0..layer.out_ch {
            let k = &layer.weights[(oc * layer.in_ch + ic) * 9..(oc * layer.in_ch + ic) * 9 + 9];
            let rot: [f64; 9] = std::array::from_fn(|t| k[8 - t]);
            conv_padded_accumulate(gplane, &padded_go[oc * pplane..(oc + 1) * pplane], &rot, h, w);
        }
    }
    (grads, grad_in)
}

/// Elementwise tanh.
pub fn tanh_forward(mut f: Feature) -> Feature {
    for v in &mut f.data {
        *v = v.tanh();
    }
    f
}

/// Backward through tanh given the cached tanh *output*.
pub fn tanh_backward(output: &Feature, grad_out: &Feature) -> Feature {
    debug_assert_eq!(output.data.len(), grad_out.data.len());
    let mut g = grad_out.clone();
    for (gv, &y) in g.data.iter_mut().zip(&output.data) {
        *gv *= 1.0 - y * y;
    }
    g
}

/// 2x2 max pooling; returns the pooled feature and the chosen index
/// (0..4, first-wins on ties) for each output cell.
pub fn maxpool2(input: &Feature) -> (Feature, Vec<u8>) {
    debug_assert!(input.h % 2 == 0 && input.w % 2 == 0);
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Feature::zeros(input.ch, oh, ow);
    let mut idx = vec![0u8; input.ch * oh * ow];
    for c in 0..input.ch {
        let ip = input.plane(c);
        let op = out.plane_mut(c);
        for y in 0..oh {
            for x in 0..ow {
                let candidates = [
                    ip[2 * y * input.w + 2 * x],
                    ip[2 * y * input.w + 2 * x + 1],
                    ip[(2 * y + 1) * input.w + 2 * x],
                    ip[(2 * y + 1) * input.w + 2 * x + 1],
                ];
                let mut best = 0usize;
                for i in 1..4 {
                    if candidates[i] > candidates[best] {
                        best = i;
                    }
                }
                op[y * ow + x] = candidates[best];
                idx[c * oh * ow + y * ow + x] = best as u8;
            }
        }
    }
    (out, idx)
}

/// Routes gradients back to the argmax positions of [`maxpool2`].
pub fn maxpool2_backward(grad_out: &Feature, idx: &[u8]) -> Feature {
    let (oh, ow) = (grad_out.h, grad_out.w);
    let mut grad_in = Feature::zeros(grad_out.ch, oh * 2, ow * 2);
    for c in 0..grad_out.ch {
        let go = grad_out.plane(c);
        let iw = ow * 2;
        let gi = grad_in.plane_mut(c);
        for y in 0..oh {
            for x in 0..ow {
                let which = idx[c * oh * ow + y * ow + x] as usize;
                let (dy, dx) = (which / 2, which % 2);
                gi[(2 * y + dy) * iw + (2 * x + dx)] += go[y * ow + x];
            }
        }
    }
    grad_in
}

/// 2x nearest-neighbor upsampling.
pub fn upsample2(input: &Feature) -> Feature {
    let (oh, ow) = (input.h * 2, input.w * 2);
    let mut out = Feature::zeros(input.ch, oh, ow);
    for c in 0..input.ch {
        let ip = input.plane(c);
        let op = out.plane_mut(c);
        for y in 0..oh {
            for x in 0..ow {
                op[y * ow + x] = ip[(y / 2) * input.w + (x / 2)];
            }
        }
    }
    out
}

/// Backward of [`upsample2`]: sums each 2x2 block.
pub fn upsample2_backward(grad_out: &Feature) -> Feature {
    debug_assert!(grad_out.h % 2 == 0 && grad_out.w % 2 == 0);
    let (ih, iw) = (grad_out.h / 2, grad_out.w / 2);
    let mut grad_in = Feature::zeros(grad_out.ch, ih, iw);
    for c in 0..grad_out.ch {
        let go = grad_out.plane(c);
        let gi = grad_in.plane_mut(c);
        let ow = grad_out.w;
        for y in 0..ih {
            for x in 0..iw {
                gi[y * iw + x] = go[2 * y * ow + 2 * x]
                    + go[2 * y * ow + 2 * x + 1]
                    + go[(2 * y + 1) * ow + 2 * x]
                    + go[(2 * y + 1) * ow + 2 * x + 1];
            }
        }
    }
    grad_in
}

/// Elementwise sum of two features. Backward passes the gradient to both
/// addends unchanged.
pub fn add(a: &Feature, b: &Feature) -> Feature {
    debug_assert_eq!(a.data.len(), b.data.len());
    let mut out = a.clone();
    for (o, &bv) in out.data.iter_mut().zip(&b.data) {
        *o += bv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_feature(rng: &mut ChaCha8Rng, ch: usize, h: usize, w: usize) -> Feature {
        Feature {
            ch,
            h,
            w,
            data: (0..ch * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn random_layer(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> ConvLayer {
        ConvLayer {
            in_ch,
            out_ch,
            weights: (0..out_ch * in_ch * 9)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
            bias: (0..out_ch).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        }
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let mut layer = ConvLayer::zeros(1, 1);
        layer.weights[4] = 1.0; // center tap
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_feature(&mut rng, 1, 6, 7);
        let out = conv3x3(&layer, &f);
        assert_eq!(out.data, f.data);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = random_layer(&mut rng, 2, 3);
        let input = random_feature(&mut rng, 2, 5, 4);
        let grad_out = random_feature(&mut rng, 3, 5, 4);

        let loss = |layer: &ConvLayer, input: &Feature| -> f64 {
            conv3x3(layer, input)
                .data
                .iter()
                .zip(&grad_out.data)
                .map(|(a, b)| a * b)
                .sum()
        };

        let (gw, gi) = conv3x3_backward(&layer, &input, &grad_out);
        let h = 1e-5;

        for t in [0usize, 7, 17, 9 * 2 * 3 - 1] {
            let mut lp = layer.clone();
            lp.weights[t] += h;
            let mut lm = layer.clone();
            lm.weights[t] -= h;
            let fd = (loss(&lp, &input) - loss(&lm, &input)) / (2.0 * h);
            assert!((fd - gw.weights[t]).abs() < 1e-7, "weight {t}: {fd} vs {}", gw.weights[t]);
        }
        for b in 0..3 {
            let mut lp = layer.clone();
            lp.bias[b] += h;
            let mut lm = layer.clone();
            lm.bias[b] -= h;
            let fd = (loss(&lp, &input) - loss(&lm, &input)) / (2.0 * h);
            assert!((fd - gw.bias[b]).abs() < 1e-7);
        }
        for j in [0usize, 11, 39] {
            let mut ip = input.clone();
            ip.data[j] += h;
            let mut im = input.clone();
            im.data[j] -= h;
            let fd = (loss(&layer, &ip) - loss(&layer, &im)) / (2.0 * h);
            assert!((fd - gi.data[j]).abs() < 1e-7, "input {j}: {fd} vs {}", gi.data[j]);
        }
    }

    #[test]
    fn pool_picks_first_max_and_routes_gradient() {
        let f = Feature {
            ch: 1,
            h: 2,
            w: 4,
            data: vec![1.0, 1.0, 0.0, 2.0, 0.5, 0.9, 2.0, 1.0],
        };
        let (out, idx) = maxpool2(&f);
        assert_eq!(out.data, vec![1.0, 2.0]);
        // ties resolve to the first candidate in scan order; the second
        // block's max 2.0 appears first at its top-right cell
        assert_eq!(idx, vec![0, 1]);

        let go = Feature {
            ch: 1,
            h: 1,
            w: 2,
            data: vec![3.0, 5.0],
        };
        let gi = maxpool2_backward(&go, &idx);
        assert_eq!(gi.data, vec![3.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_roundtrip_gradient_sums_blocks() {
        let f = Feature {
            ch: 1,
            h: 1,
            w: 2,
            data: vec![1.0, 2.0],
        };
        let up = upsample2(&f);
        assert_eq!(up.data, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let gi = upsample2_backward(&up);
        assert_eq!(gi.data, vec![4.0, 8.0]);
    }

    #[test]
    fn add_backward_is_identity_to_both_branches() {
        // d(a+b)/da = d(a+b)/db = 1, so a shared upstream gradient reaches
        // both addends unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_feature(&mut rng, 1, 3, 3);
        let b = random_feature(&mut rng, 1, 3, 3);
        let g = random_feature(&mut rng, 1, 3, 3);
        let h = 1e-6;
        let loss = |a: &Feature, b: &Feature| -> f64 {
            add(a, b).data.iter().zip(&g.data).map(|(x, y)| x * y).sum()
        };
        for j in 0..9 {
            let mut ap = a.clone();
            ap.data[j] += h;
            let fd_a = (loss(&ap, &b) - loss(&a, &b)) / h;
            let mut bp = b.clone();
            bp.data[j] += h;
            let fd_b = (loss(&a, &bp) - loss(&a, &b)) / h;
            assert!((fd_a - g.data[j]).abs() < 1e-9);
            assert!((fd_b - g.data[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn tanh_backward_uses_cached_output() {
        let f = Feature {
            ch: 1,
            h: 1,
            w: 3,
            data: vec![-0.7, 0.0, 1.3],
        };
        let y = tanh_forward(f.clone());
        let go = Feature {
            ch: 1,
            h: 1,
            w: 3,
            data: vec![1.0, 1.0, 1.0],
        };
        let gi = tanh_backward(&y, &go);
        for j in 0..3 {
            let h = 1e-6;
            let fd = ((f.data[j] + h).tanh() - (f.data[j] - h).tanh()) / (2.0 * h);
            assert!((gi.data[j] - fd).abs() < 1e-9);
        }
    }
}
