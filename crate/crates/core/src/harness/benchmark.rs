//! Standard benchmark recipe: one seeded stack, a tuned bandpass
//! baseline per pairing kind, and per-condition match runs labeled
//! against ground truth.

use serde::{Deserialize, Serialize};

use crate::preprocess::{tune_bandpass, BandpassConfig, Condition, LabeledPair};
use crate::raster::crop;
use crate::{downsample, NetConfig, PatchSpec, Result, TrainConfig};

use super::matching::{label_records, make_grid, match_prepared, MatchConfig};
use super::synth::{truth_displacement, SynthSpec, SynthStack};
use super::MatchRecord;

/// Everything needed to reproduce the benchmark end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub stack: SynthSpec,
    pub eval_sections: usize,
    pub eval_seed: u64,
    pub train_sections: usize,
    pub train_seed: u64,
    pub match_cfg: MatchConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub bandpass_grid: Vec<BandpassConfig>,
}

impl BenchmarkSpec {
    /// The frozen desk-scale benchmark.
    pub fn standard(seed: u64) -> Self {
        let sigma = |lo: f64, hi: f64| BandpassConfig {
            sigma_low: lo,
            sigma_high: hi,
        };
        Self {
            stack: SynthSpec::desk(),
            eval_sections: 4,
            eval_seed: seed,
            train_sections: 5,
            train_seed: seed.wrapping_add(101),
            match_cfg: MatchConfig::desk(),
            net: NetConfig::default(),
            train: TrainConfig::desk(),
            bandpass_grid: vec![
                sigma(1.5, 8.0),
                sigma(1.5, 12.0),
                sigma(2.0, 8.0),
                sigma(2.0, 12.0),
                sigma(2.0, 18.0),
                sigma(2.5, 12.0),
                sigma(2.5, 18.0),
                sigma(2.5, 25.0),
                sigma(3.0, 12.0),
                sigma(3.0, 25.0),
                sigma(4.0, 18.0),
                sigma(4.0, 25.0),
            ],
        }
    }

    /// Adjacent section pairs of the eval stack.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.eval_sections - 1).map(|k| (k, k + 1)).collect()
    }

    /// Next-nearest pairs of the eval stack.
    pub fn across_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.eval_sections.saturating_sub(2))
            .map(|k| (k, k + 2))
            .collect()
    }
}

/// Builds bandpass-tuning examples by cropping raw downsampled windows
/// around a subset of grid nodes, with ground truth converted to
/// downsampled pixels.
pub fn tuning_pairs(
    stack: &SynthStack,
    pairs: &[(usize, usize)],
    cfg: &MatchConfig,
    max_nodes_per_pair: usize,
) -> Result<Vec<LabeledPair>> {
    let f = cfg.downsample_factor;
    let mut out = Vec::new();
    for &(i, j) in pairs {
        let tpl_small = downsample(&stack.sections[i], f)?;
        let src_small = downsample(&stack.sections[j], f)?;
        let nodes = make_grid(
            stack.sections[i].width(),
            stack.sections[i].height(),
            &cfg.grid_spec(),
        );
        let stride = (nodes.len() / max_nodes_per_pair.max(1)).max(1);
        for &(nx, ny) in nodes.iter().step_by(stride) {
            let (xd, yd) = (nx / f, ny / f);
            let t = cfg.template_size;
            let s = cfg.source_size;
            if xd < s / 2 || yd < s / 2 || xd + s / 2 > src_small.width() || yd + s / 2 > src_small.height() {
                continue;
            }
            let template = crop(
                &tpl_small,
                PatchSpec { x: xd - t / 2, y: yd - t / 2, size: t },
            )?;
            let source = crop(
                &src_small,
                PatchSpec { x: xd - s / 2, y: yd - s / 2, size: s },
            )?;
            let truth_full = truth_displacement(
                &stack.warps[i],
                &stack.warps[j],
                (nx as f64, ny as f64),
            );
            out.push(LabeledPair {
                template,
                source,
                truth: (truth_full.0 / f as f64, truth_full.1 / f as f64),
            });
        }
    }
    Ok(out)
}

/// Tunes the bandpass on the given section pairs; the false-match radius
/// is the truth tolerance converted to downsampled pixels.
pub fn tune_on_stack(
    stack: &SynthStack,
    pairs: &[(usize, usize)],
    cfg: &MatchConfig,
    grid: &[BandpassConfig],
    max_nodes_per_pair: usize,
) -> Result<BandpassConfig> {
    let samples = tuning_pairs(stack, pairs, cfg, max_nodes_per_pair)?;
    let radius = cfg.truth_tolerance / cfg.downsample_factor as f64;
    tune_bandpass(&samples, grid, radius, cfg.downsample_factor)
}

/// Matches and labels every listed section pair under one condition,
/// preparing each referenced section only once. Pair ids take the form
/// `i-j`.
pub fn run_condition(
    stack: &SynthStack,
    pairs: &[(usize, usize)],
    condition: &Condition,
    cfg: &MatchConfig,
) -> Result<Vec<MatchRecord>> {
    use std::collections::BTreeMap;
    let mut prepared: BTreeMap<usize, crate::Raster> = BTreeMap::new();
    for &(i, j) in pairs {
        for k in [i, j] {
            if !prepared.contains_key(&k) {
                let prep = crate::preprocess::prepare_section(
                    &stack.sections[k],
                    condition,
                    cfg.downsample_factor,
                )?;
                prepared.insert(k, prep);
            }
        }
    }
    let mut all = Vec::new();
    for &(i, j) in pairs {
        let nodes = make_grid(
            stack.sections[i].width(),
            stack.sections[i].height(),
            &cfg.grid_spec(),
        );
        let mut outcome = match_prepared(
            &prepared[&i],
            &prepared[&j],
            &nodes,
            condition.name(),
            cfg,
            &format!("{i}-{j}"),
        )?;
        label_records(&mut outcome.records, stack, i, j, cfg.truth_tolerance);
        all.extend(outcome.records);
    }
    Ok(all)
}

/// False-match count in a labeled record set.
pub fn false_count(records: &[MatchRecord]) -> usize {
    records
        .iter()
        .filter(|r| r.label == super::Label::False)
        .count()
}
