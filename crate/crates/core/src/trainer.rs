//! Weakly supervised correlation-gap training.
//!
//! Each iteration alternates two phases on one batch: similar pairs, where
//! the loss widens the gap between the primary and secondary correlogram
//! peaks, and the same batch with sources deranged among templates, where
//! the loss lowers the primary peak. Both phases update the shared
//! parameters with Adam. Supervision is weak: a template is known (by
//! construction) to match somewhere inside its source, but no location is
//! labeled.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::{self, NetConfig, NetParams};
use crate::ncc::{
    analyze_peaks_plane, ncc_fft_plane, peak_gradient_plane, Correlogram, PeakAnalysis,
};
use crate::{crop, rotate90, Error, PatchSpec, Plane, Raster, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Gradients are rescaled when their global norm exceeds this; early
/// iterations can place both peaks on near-degenerate correlograms.
pub const GRAD_CLIP_NORM: f64 = 10.0;

/// Training hyperparameters. Sizes are in pixels at the training
/// resolution (images are downsampled before pairs are cropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_iters: u32,
    /// Exclusion-window side for the gap loss, in correlogram pixels.
    pub exclusion_train: usize,
    pub template_size: usize,
    pub source_size: usize,
    pub seed: u64,
    /// Template crops keep this margin inside the source window so the
    /// true match survives moderate deformation.
    pub crop_margin: usize,
    /// Accumulate both phases into a single optimizer step instead of one
    /// step per phase.
    pub combined_step: bool,
    /// Checkpoint cadence used by [`train_with_checkpoints`]; 0 disables.
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 5e-4,
            max_iters: 10_000,
            exclusion_train: 20,
            template_size: 160,
            source_size: 512,
            seed: 0,
            crop_margin: 16,
            combined_step: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale run: small crops and an iteration budget that fits a
    /// laptop-class CPU in minutes.
    pub fn desk() -> Self {
        Self {
            template_size: 48,
            source_size: 128,
            max_iters: 300,
            crop_margin: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(
                "batch_size must be >= 2 (derangements need two pairs)".into(),
            ));
        }
        if self.exclusion_train == 0 {
            return Err(Error::InvalidArgument("exclusion_train must be >= 1".into()));
        }
        if self.template_size >= self.source_size {
            return Err(Error::InvalidArgument(format!(
                "template_size {} must be < source_size {}",
                self.template_size, self.source_size
            )));
        }
        if self.template_size + 2 * self.crop_margin > self.source_size {
            return Err(Error::InvalidArgument(
                "crop_margin leaves no room for the template inside the source".into(),
            ));
        }
        Ok(())
    }
}

/// Aligned image pairs at training resolution; templates are cropped from
/// the first image, sources from the second.
#[derive(Debug, Clone)]
pub struct PairDataset {
    pub pairs: Vec<(Raster, Raster)>,
}

/// Where a sample's crops came from, for reproducibility checks and
/// divergence diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub pair_index: usize,
    pub source_origin: (usize, usize),
    pub template_origin: (usize, usize),
    pub rotation: u8,
}

/// One template/source crop pair known to contain a true match.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub template: Raster,
    pub source: Raster,
    pub provenance: Provenance,
}

/// Samples a batch: a random source window per pair, a template window
/// placed uniformly inside it (shrunk by the crop margin) so the peak
/// position is uniformly distributed, and one shared 90-degree rotation
/// applied to both crops.
pub fn make_batch(
    dataset: &PairDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PairSample>> {
    cfg.validate()?;
    if dataset.pairs.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let s = cfg.source_size;
    let t = cfg.template_size;
    let m = cfg.crop_margin;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let pair_index = rng.gen_range(0..dataset.pairs.len());
        let (img_a, img_b) = &dataset.pairs[pair_index];
        if img_b.width() < s || img_b.height() < s || img_a.width() < s || img_a.height() < s {
            return Err(Error::InvalidArgument(format!(
                "dataset image {}x{} smaller than source_size {s}",
                img_b.width(),
                img_b.height()
            )));
        }
        let sx = rng.gen_range(0..=img_b.width() - s);
        let sy = rng.gen_range(0..=img_b.height() - s);
        let tx = rng.gen_range(sx + m..=sx + s - t - m);
        let ty = rng.gen_range(sy + m..=sy + s - t - m);
        let rotation = rng.gen_range(0..4u8);

        let template = rotate90(
            &crop(img_a, PatchSpec { x: tx, y: ty, size: t })?,
            rotation as u32,
        )?;
        let source = rotate90(
            &crop(img_b, PatchSpec { x: sx, y: sy, size: s })?,
            rotation as u32,
        )?;
        batch.push(PairSample {
            template,
            source,
            provenance: Provenance {
                pair_index,
                source_origin: (sx, sy),
                template_origin: (tx, ty),
                rotation,
            },
        });
    }
    Ok(batch)
}

/// Re-pairs sources with templates by a derangement (no sample keeps its
/// own source). Returns the permuted batch and the permutation.
pub fn permute_batch(
    batch: &[PairSample],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<PairSample>, Vec<usize>)> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "permutation needs a batch of >= 2".into(),
        ));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        // Fisher-Yates, retried until no fixed point
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    let permuted = batch
        .iter()
        .enumerate()
        .map(|(i, sample)| PairSample {
            template: sample.template.clone(),
            source: batch[perm[i]].source.clone(),
            provenance: sample.provenance.clone(),
        })
        .collect();
    Ok((permuted, perm))
}

/// Sparse gradient of a loss with respect to correlogram entries.
pub type CorrGrad = Vec<((usize, usize), f64)>;

/// Correlation-gap loss: `-(r_max - r_second)`. The subgradient is -1 at
/// the primary peak and +1 at the secondary; if the exclusion square
/// covered the whole correlogram, only the primary term remains.
pub fn gap_loss(corr: &Correlogram, exclusion: usize) -> Result<(f64, CorrGrad)> {
    gap_loss_plane(&corr.to_plane(), exclusion)
}

/// [`gap_loss`] on a double-precision correlogram.
pub fn gap_loss_plane(corr: &Plane, exclusion: usize) -> Result<(f64, CorrGrad)> {
    let peaks = analyze_peaks_plane(corr, exclusion)?;
    let loss = -(peaks.r_max - peaks.r_second);
    let mut grad = vec![(peaks.primary_loc, -1.0)];
    if !peaks.remainder_empty {
        grad.push((peaks.secondary_loc, 1.0));
    }
    Ok((loss, grad))
}

/// Dissimilar-pair loss: the primary peak height itself.
pub fn dissimilar_loss(corr: &Correlogram) -> Result<(f64, CorrGrad)> {
    dissimilar_loss_plane(&corr.to_plane())
}

/// [`dissimilar_loss`] on a double-precision correlogram.
pub fn dissimilar_loss_plane(corr: &Plane) -> Result<(f64, CorrGrad)> {
    let peaks = analyze_peaks_plane(corr, 1)?;
    Ok((peaks.r_max, vec![(peaks.primary_loc, 1.0)]))
}

/// Adam moment accumulators, shaped like the parameters they update.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub m: NetParams,
    pub v: NetParams,
    pub step: u64,
}

impl OptimState {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        Ok(Self {
            m: NetParams::zeros(cfg)?,
            v: NetParams::zeros(cfg)?,
            step: 0,
        })
    }
}

/// One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8).
pub fn adam_step(
    params: &mut NetParams,
    grads: &NetParams,
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    if params.config != grads.config {
        return Err(Error::Shape(
            "gradient shapes do not match parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p_layer, g_layer), (m_layer, v_layer)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut().zip(&mut state.v.layers))
    {
        let p = p_layer.weights.iter_mut().chain(p_layer.bias.iter_mut());
        let g = g_layer.weights.iter().chain(g_layer.bias.iter());
        let m = m_layer.weights.iter_mut().chain(m_layer.bias.iter_mut());
        let v = v_layer.weights.iter_mut().chain(v_layer.bias.iter_mut());
        for (((p, &g), m), v) in p.zip(g).zip(m).zip(v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

/// Which loss a pair contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    Similar,
    Dissimilar,
}

/// Loss, peak analysis, and parameter gradients for one siamese pair.
#[derive(Debug)]
pub struct PairGrads {
    pub loss: f64,
    pub peaks: PeakAnalysis,
    pub grads: NetParams,
}

/// Full differentiable chain for one pair: network on both inputs, FFT
/// NCC, peak loss, then backpropagation through the two peak entries and
/// both siamese paths (shared weights sum their gradients).
pub fn pair_gradients(
    params: &NetParams,
    template: &Plane,
    source: &Plane,
    exclusion: usize,
    mode: PairMode,
) -> Result<PairGrads> {
    let (t_out, t_acts) = convnet::forward_plane(params, template)?;
    let (s_out, s_acts) = convnet::forward_plane(params, source)?;
    let corr = ncc_fft_plane(&t_out, &s_out)?;
    let peaks = analyze_peaks_plane(&corr, exclusion)?;
    let (loss, corr_grad) = match mode {
        PairMode::Similar => gap_loss_plane(&corr, exclusion)?,
        PairMode::Dissimilar => dissimilar_loss_plane(&corr)?,
    };

    let mut grad_t = Plane::zeros(t_out.width(), t_out.height());
    let mut grad_s = Plane::zeros(s_out.width(), s_out.height());
    for &(loc, coeff) in &corr_grad {
        let pg = peak_gradient_plane(&t_out, &s_out, loc)?;
        for (a, b) in grad_t.data_mut().iter_mut().zip(pg.grad_template.data()) {
            *a += coeff * b;
        }
        for (a, b) in grad_s.data_mut().iter_mut().zip(pg.grad_source.data()) {
            *a += coeff * b;
        }
    }

    let (mut grads, _) = convnet::backward(params, &t_acts, &grad_t)?;
    let (s_grads, _) = convnet::backward(params, &s_acts, &grad_s)?;
    grads.add_scaled(&s_grads, 1.0);
    Ok(PairGrads { loss, peaks, grads })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: u32,
    pub gap_loss: f64,
    pub dissim_loss: f64,
    pub mean_r_max: f64,
    pub mean_r_delta: f64,
    pub grad_norm: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub log: Vec<TrainRecord>,
}

/// Trains from a fresh [`convnet::init`] of `net_cfg`.
pub fn train(
    dataset: &PairDataset,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_checkpoints(dataset, net_cfg, train_cfg, None)
}

/// [`train`] with optional periodic checkpoints written to a directory
/// every `train_cfg.checkpoint_every` iterations.
pub fn train_with_checkpoints(
    dataset: &PairDataset,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    let mut params = convnet::init(net_cfg)?;
    let mut state = OptimState::new(net_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut log = Vec::with_capacity(train_cfg.max_iters as usize);

    for iteration in 0..train_cfg.max_iters {
        let batch = make_batch(dataset, train_cfg, &mut rng)?;
        let similar = batch_gradients(&params, &batch, train_cfg, PairMode::Similar)?;
        check_finite(iteration, similar.loss, &batch)?;

        let mut grad_norm = similar.grads.global_norm();
        let mut gap_stats = similar;
        if !train_cfg.combined_step {
            clip(&mut gap_stats.grads);
            adam_step(&mut params, &gap_stats.grads, &mut state, train_cfg.lr)?;
        }

        let (permuted, _) = permute_batch(&batch, &mut rng)?;
        let mut dissim = batch_gradients(&params, &permuted, train_cfg, PairMode::Dissimilar)?;
        check_finite(iteration, dissim.loss, &permuted)?;

        if train_cfg.combined_step {
            gap_stats.grads.add_scaled(&dissim.grads, 1.0);
            grad_norm = gap_stats.grads.global_norm();
            clip(&mut gap_stats.grads);
            adam_step(&mut params, &gap_stats.grads, &mut state, train_cfg.lr)?;
        } else {
            clip(&mut dissim.grads);
            adam_step(&mut params, &dissim.grads, &mut state, train_cfg.lr)?;
        }

        log.push(TrainRecord {
            iteration,
            gap_loss: gap_stats.loss,
            dissim_loss: dissim.loss,
            mean_r_max: gap_stats.mean_r_max,
            mean_r_delta: gap_stats.mean_r_delta,
            grad_norm,
        });

        if let Some(dir) = checkpoint_dir {
            let every = train_cfg.checkpoint_every;
            if every > 0 && (iteration + 1) % every == 0 {
                let path = dir.join(format!("checkpoint_{:06}.ncw", iteration + 1));
                convnet::save_checkpoint(&params, &path)?;
            }
        }
    }
    Ok(TrainOutcome { params, log })
}

struct BatchGrads {
    grads: NetParams,
    loss: f64,
    mean_r_max: f64,
    mean_r_delta: f64,
}

/// Per-pair gradients run in parallel; the reduction is an ordered
/// sequential sum so results do not depend on thread count.
fn batch_gradients(
    params: &NetParams,
    batch: &[PairSample],
    cfg: &TrainConfig,
    mode: PairMode,
) -> Result<BatchGrads> {
    let per_pair: Vec<PairGrads> = batch
        .par_iter()
        .map(|sample| {
            pair_gradients(
                params,
                &Plane::from_raster(&sample.template),
                &Plane::from_raster(&sample.source),
                cfg.exclusion_train,
                mode,
            )
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut grads = NetParams::zeros(&params.config)?;
    let mut loss = 0.0;
    let mut r_max = 0.0;
    let mut r_delta = 0.0;
    for pg in &per_pair {
        grads.add_scaled(&pg.grads, scale);
        loss += pg.loss * scale;
        r_max += pg.peaks.r_max * scale;
        r_delta += pg.peaks.r_delta * scale;
    }
    Ok(BatchGrads {
        grads,
        loss,
        mean_r_max: r_max,
        mean_r_delta: r_delta,
    })
}

fn clip(grads: &mut NetParams) {
    let norm = grads.global_norm();
    if norm > GRAD_CLIP_NORM {
        grads.scale(GRAD_CLIP_NORM / norm);
    }
}

fn check_finite(iteration: u32, loss: f64, batch: &[PairSample]) -> Result<()> {
    if loss.is_finite() {
        return Ok(());
    }
    let provenance: Vec<String> = batch
        .iter()
        .map(|s| format!("{:?}", s.provenance))
        .collect();
    Err(Error::Diverged {
        iteration,
        detail: format!("non-finite loss; batch provenance: {}", provenance.join("; ")),
    })
}

/// Mean peak statistics of fixed evaluation pairs under the current
/// parameters; used for held-out monitoring.
pub fn evaluate_pairs(
    params: &NetParams,
    samples: &[PairSample],
    exclusion: usize,
) -> Result<(f64, f64)> {
    let peaks: Vec<PeakAnalysis> = samples
        .par_iter()
        .map(|sample| {
            let (t, _) = convnet::forward_plane(params, &Plane::from_raster(&sample.template))?;
            let (s, _) = convnet::forward_plane(params, &Plane::from_raster(&sample.source))?;
            analyze_peaks_plane(&ncc_fft_plane(&t, &s)?, exclusion)
        })
        .collect::<Result<_>>()?;
    let n = peaks.len() as f64;
    let mean_r_max = peaks.iter().map(|p| p.r_max).sum::<f64>() / n;
    let mean_r_delta = peaks.iter().map(|p| p.r_delta).sum::<f64>() / n;
    Ok((mean_r_max, mean_r_delta))
}

/// Writes the training log with the fixed column order
/// `iteration,gap_loss,dissim_loss,mean_r_max,mean_r_delta,grad_norm`.
pub fn write_log_csv(log: &[TrainRecord], path: &Path) -> Result<()> {
    let mut out = String::from("iteration,gap_loss,dissim_loss,mean_r_max,mean_r_delta,grad_norm\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration, r.gap_loss, r.dissim_loss, r.mean_r_max, r.mean_r_delta, r.grad_norm
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
