//! Encoder-decoder preprocessing network with residual blocks, tanh
//! convolutions, summation skip connections, and symmetric input/output
//! resolution. One channel in, one channel out; the same parameters are
//! applied to both images of a siamese pair.
//!
//! Layer order (fixed by the config): per encoder level an entry conv
//! followed by a residual block of three convs with a skip from the first
//! conv's output to the last conv's pre-activation; 2x2 max-pool between
//! levels; the decoder mirrors with 2x nearest-neighbor upsampling, an
//! entry conv, an elementwise sum with the same-level encoder output, and
//! a residual block; a final linear 3x3 conv maps to one channel.

mod net;
mod ops;

pub use net::{apply_full_image, backward, forward, forward_plane, Activations};
pub use ops::{ConvLayer, Feature};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture hyperparameters. Channel count at level `k` is
/// `base_channels << k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub levels: usize,
    pub base_channels: usize,
    /// Convolution kernel side; fixed at 3.
    pub kernel: usize,
    /// Convolutions per residual block; fixed at 3.
    pub block_convs: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    /// Desk-scale default: three levels, 8 doubling to 32 channels.
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 8,
            kernel: 3,
            block_convs: 3,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// Full-size configuration: four levels, 8 doubling to 64 channels.
    pub fn full() -> Self {
        Self {
            levels: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.base_channels < 1 {
            return Err(Error::InvalidArgument(
                "levels and base_channels must be >= 1".into(),
            ));
        }
        if self.kernel != 3 || self.block_convs != 3 {
            return Err(Error::InvalidArgument(
                "kernel and block_convs are fixed at 3".into(),
            ));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input dimensions must be divisible by this.
    pub fn dim_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// (in_ch, out_ch) for every conv layer in declaration order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let l = self.levels;
        let mut shapes = Vec::with_capacity(8 * l - 3);
        for k in 0..l {
            let ch = self.channels(k);
            let prev = if k == 0 { 1 } else { self.channels(k - 1) };
            shapes.push((prev, ch));
            for _ in 0..3 {
                shapes.push((ch, ch));
            }
        }
        for k in (0..l.saturating_sub(1)).rev() {
            let ch = self.channels(k);
            shapes.push((self.channels(k + 1), ch));
            for _ in 0..3 {
                shapes.push((ch, ch));
            }
        }
        shapes.push((self.channels(0), 1));
        shapes
    }

    /// Total number of scalar parameters, derivable from the config alone.
    pub fn param_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|&(i, o)| o * i * 9 + o)
            .sum()
    }
}

// layer indices within the declaration order
pub(crate) fn enc_in_idx(k: usize) -> usize {
    4 * k
}
pub(crate) fn enc_res_idx(k: usize, i: usize) -> usize {
    4 * k + 1 + i
}
pub(crate) fn dec_up_idx(levels: usize, k: usize) -> usize {
    4 * levels + 4 * (levels - 2 - k)
}
pub(crate) fn dec_res_idx(levels: usize, k: usize, i: usize) -> usize {
    dec_up_idx(levels, k) + 1 + i
}
pub(crate) fn final_idx(levels: usize) -> usize {
    8 * levels - 4
}

/// All convolution weights and biases, in the declaration order fixed by
/// the config.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub layers: Vec<ConvLayer>,
}

impl NetParams {
    /// Zero-filled parameters with the shapes demanded by `cfg`.
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg
            .conv_shapes()
            .into_iter()
            .map(|(i, o)| ConvLayer::zeros(i, o))
            .collect();
        Ok(Self {
            config: cfg.clone(),
            layers,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Flat iteration over every parameter, weights before bias per layer.
    pub fn for_each_param(&self, mut f: impl FnMut(f64)) {
        for layer in &self.layers {
            layer.weights.iter().for_each(|&v| f(v));
            layer.bias.iter().for_each(|&v| f(v));
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|v| f(v));
            layer.bias.iter_mut().for_each(|v| f(v));
        }
    }

    /// Euclidean norm over all parameters.
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each_param(|v| acc += v * v);
        acc.sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_param_mut(|v| *v *= s);
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += s * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
    }
}

/// Weights drawn from a zero-mean uniform distribution scaled by
/// 1/sqrt(fan_in); biases zero. Deterministic given the config seed.
/// Draws are made in single precision so checkpoints round-trip exactly.
pub fn init(cfg: &NetConfig) -> Result<NetParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers = cfg
        .conv_shapes()
        .into_iter()
        .map(|(in_ch, out_ch)| {
            let scale = (1.0 / ((in_ch * 9) as f32).sqrt()) as f32;
            let weights = (0..out_ch * in_ch * 9)
                .map(|_| rng.gen_range(-scale..scale) as f64)
                .collect();
            ConvLayer {
                in_ch,
                out_ch,
                weights,
                bias: vec![0.0; out_ch],
            }
        })
        .collect();
    Ok(NetParams {
        config: cfg.clone(),
        layers,
    })
}

const CKPT_MAGIC: &[u8; 4] = b"NCW1";

/// Checkpoint layout: magic "NCW1", u32 LE length-prefixed config JSON,
/// then tensors in declaration order (weights, then biases) as f32 LE.
pub fn save_checkpoint(params: &NetParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let json = serde_json::to_string(&params.config)
        .map_err(|e| Error::InvalidArgument(format!("config serialization failed: {e}")))?;
    w.write_all(CKPT_MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_all(&(json.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(json.as_bytes()).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    params.for_each_param(|v| buf.extend_from_slice(&(v as f32).to_le_bytes()));
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and validates the tensor manifest against the
/// embedded config.
pub fn load_checkpoint(path: &Path) -> Result<NetParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[0..4] != CKPT_MAGIC {
        return Err(Error::parse(path, 0, "bad magic, expected NCW1"));
    }
    let json_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + json_len {
        return Err(Error::parse(path, bytes.len(), "truncated config"));
    }
    let cfg: NetConfig = serde_json::from_slice(&bytes[8..8 + json_len])
        .map_err(|e| Error::parse(path, 8, format!("bad config JSON: {e}")))?;
    cfg.validate()?;

    let expected = cfg.param_count();
    let payload = &bytes[8 + json_len..];
    if payload.len() != expected * 4 {
        return Err(Error::parse(
            path,
            8 + json_len,
            format!(
                "tensor payload holds {} values, config demands {expected}",
                payload.len() / 4
            ),
        ));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut params = NetParams::zeros(&cfg)?;
    for layer in &mut params.layers {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = values.next().unwrap();
        }
    }
    let mut bad = None;
    params.for_each_param(|v| {
        if !v.is_finite() && bad.is_none() {
            bad = Some(());
        }
    });
    if bad.is_some() {
        return Err(Error::parse(path, 8 + json_len, "non-finite parameter"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = NetConfig::default();
        let a = init(&cfg).unwrap();
        let b = init(&cfg).unwrap();
        assert_eq!(a, b);
        let mut cfg2 = cfg.clone();
        cfg2.seed = 1;
        assert_ne!(init(&cfg2).unwrap(), a);
    }

    #[test]
    fn biases_zero_after_init() {
        let params = init(&NetConfig::default()).unwrap();
        for layer in &params.layers {
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn tiny_config_shape_list() {
        let cfg = NetConfig {
            levels: 1,
            base_channels: 2,
            seed: 0,
            ..NetConfig::default()
        };
        // entry conv, three residual convs, final conv
        assert_eq!(
            cfg.conv_shapes(),
            vec![(1, 2), (2, 2), (2, 2), (2, 2), (2, 1)]
        );
        // 2*1*9+2 + 3*(2*2*9+2) + 1*2*9+1 = 20 + 114 + 19
        assert_eq!(cfg.param_count(), 153);
    }

    #[test]
    fn param_count_matches_enumerated_shapes() {
        for (levels, base, seed) in [(1, 3, 0u64), (2, 4, 1), (3, 8, 2), (2, 1, 3), (4, 2, 4)] {
            let cfg = NetConfig {
                levels,
                base_channels: base,
                seed,
                ..NetConfig::default()
            };
            let params = init(&cfg).unwrap();
            assert_eq!(params.param_count(), cfg.param_count());
            assert_eq!(params.layers.len(), 8 * levels - 3);
        }
    }

    #[test]
    fn layer_index_helpers_cover_declaration_order() {
        let l = 3usize;
        let mut seen = vec![false; 8 * l - 3];
        for k in 0..l {
            seen[enc_in_idx(k)] = true;
            for i in 0..3 {
                seen[enc_res_idx(k, i)] = true;
            }
        }
        for k in 0..l - 1 {
            seen[dec_up_idx(l, k)] = true;
            for i in 0..3 {
                seen[dec_res_idx(l, k, i)] = true;
            }
        }
        seen[final_idx(l)] = true;
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let cfg = NetConfig {
            levels: 2,
            base_channels: 3,
            seed: 9,
            ..NetConfig::default()
        };
        let params = init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ncw");
        save_checkpoint(&params, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn checkpoint_rejects_payload_mismatch() {
        let cfg = NetConfig {
            levels: 1,
            base_channels: 2,
            seed: 0,
            ..NetConfig::default()
        };
        let params = init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ncw");
        save_checkpoint(&params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
    }
}
