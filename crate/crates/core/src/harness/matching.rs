//! Triangular-grid matching over section pairs and neighbor-deviation
//! screening.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ncc::{analyze_peaks, ncc_fft};
use crate::preprocess::{prepare_section, Condition};
use crate::raster::crop;
use crate::{Error, PatchSpec, Raster, Result};

use super::synth::{truth_displacement, SynthStack};
use super::{Label, MatchRecord};

/// Triangular lattice geometry at full resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Lattice edge length in pixels.
    pub edge: f64,
    /// Nodes closer than this to any section border are dropped.
    pub margin: usize,
}

/// Hexagonal-lattice nodes anchored at the margin corner: rows spaced
/// edge * sqrt(3)/2, alternate rows offset by edge/2, rounded to the
/// nearest pixel, margin-violating nodes dropped.
pub fn make_grid(width: usize, height: usize, spec: &GridSpec) -> Vec<(usize, usize)> {
    let mut nodes = Vec::new();
    if width <= 2 * spec.margin || height <= 2 * spec.margin {
        return nodes;
    }
    let row_step = spec.edge * 3f64.sqrt() / 2.0;
    let x_max = (width - 1 - spec.margin) as f64;
    let y_max = (height - 1 - spec.margin) as f64;
    let mut row = 0usize;
    loop {
        let y = (spec.margin as f64 + row as f64 * row_step).round();
        if y > y_max {
            break;
        }
        let offset = if row % 2 == 1 { spec.edge / 2.0 } else { 0.0 };
        let mut col = 0usize;
        loop {
            let x = (spec.margin as f64 + offset + col as f64 * spec.edge).round();
            if x > x_max {
                break;
            }
            nodes.push((x as usize, y as usize));
            col += 1;
        }
        row += 1;
    }
    nodes
}

/// Experiment geometry shared by all conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Template side in downsampled pixels.
    pub template_size: usize,
    /// Source side in downsampled pixels.
    pub source_size: usize,
    pub downsample_factor: usize,
    /// Exclusion-window side for r_delta, in correlogram pixels.
    pub eval_exclusion: usize,
    /// Grid edge at full resolution.
    pub grid_edge: f64,
    /// Distance from ground truth beyond which a match is false, at full
    /// resolution.
    pub truth_tolerance: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MatchConfig {
    /// Desk-scale geometry.
    pub fn desk() -> Self {
        Self {
            template_size: 48,
            source_size: 128,
            downsample_factor: 3,
            eval_exclusion: 5,
            grid_edge: 150.0,
            truth_tolerance: 10.0,
        }
    }

    /// Margin keeping the source crop inside the section, at full
    /// resolution.
    pub fn margin(&self) -> usize {
        self.source_size * self.downsample_factor / 2 + self.downsample_factor
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            edge: self.grid_edge,
            margin: self.margin(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.template_size >= self.source_size {
            return Err(Error::InvalidArgument(
                "template_size must be < source_size".into(),
            ));
        }
        if self.downsample_factor == 0 || self.eval_exclusion == 0 {
            return Err(Error::InvalidArgument(
                "downsample_factor and eval_exclusion must be >= 1".into(),
            ));
        }
        if !(self.grid_edge > 0.0) || !(self.truth_tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "grid_edge and truth_tolerance must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A node dropped from matching, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedNode {
    pub node: (usize, usize),
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub records: Vec<MatchRecord>,
    pub skipped: Vec<SkippedNode>,
}

/// Matches every grid node between two sections under one condition.
///
/// Both sections are downsampled and preprocessed once; per node, a
/// template window centered on the node is cropped from the first
/// prepared section and a source window from the second, the FFT
/// correlogram is analyzed with the evaluation exclusion, and the
/// displacement is reported at full resolution.
pub fn match_pair(
    template_section: &Raster,
    source_section: &Raster,
    nodes: &[(usize, usize)],
    condition: &Condition,
    cfg: &MatchConfig,
    pair_id: &str,
) -> Result<MatchOutcome> {
    cfg.validate()?;
    let f = cfg.downsample_factor;
    let prep_t = prepare_section(template_section, condition, f)?;
    let prep_s = prepare_section(source_section, condition, f)?;
    match_prepared(&prep_t, &prep_s, nodes, condition.name(), cfg, pair_id)
}

/// [`match_pair`] on sections that are already downsampled and
/// preprocessed; used to share section preparation across pairs.
pub fn match_prepared(
    prep_t: &Raster,
    prep_s: &Raster,
    nodes: &[(usize, usize)],
    condition_name: &str,
    cfg: &MatchConfig,
    pair_id: &str,
) -> Result<MatchOutcome> {
    cfg.validate()?;
    let f = cfg.downsample_factor;
    let t = cfg.template_size;
    let s = cfg.source_size;
    let zero_off = ((s - t) / 2) as f64;

    let results: Vec<std::result::Result<MatchRecord, SkippedNode>> = nodes
        .par_iter()
        .map(|&(nx, ny)| {
            let xd = nx / f;
            let yd = ny / f;
            let fits = |center: usize, half: usize, extent: usize| {
                center >= half && center + half <= extent
            };
            if !fits(xd, s / 2, prep_s.width())
                || !fits(yd, s / 2, prep_s.height())
                || !fits(xd, t / 2, prep_t.width())
                || !fits(yd, t / 2, prep_t.height())
            {
                return Err(SkippedNode {
                    node: (nx, ny),
                    reason: format!(
                        "downsampled node ({xd},{yd}) too close to border for source window {s}"
                    ),
                });
            }
            let tpl = crop(
                prep_t,
                PatchSpec {
                    x: xd - t / 2,
                    y: yd - t / 2,
                    size: t,
                },
            )
            .map_err(|e| SkippedNode {
                node: (nx, ny),
                reason: e.to_string(),
            })?;
            let src = crop(
                prep_s,
                PatchSpec {
                    x: xd - s / 2,
                    y: yd - s / 2,
                    size: s,
                },
            )
            .map_err(|e| SkippedNode {
                node: (nx, ny),
                reason: e.to_string(),
            })?;

            let corr = ncc_fft(&tpl, &src).map_err(|e| SkippedNode {
                node: (nx, ny),
                reason: e.to_string(),
            })?;
            let peaks = analyze_peaks(&corr, cfg.eval_exclusion).map_err(|e| SkippedNode {
                node: (nx, ny),
                reason: e.to_string(),
            })?;

            let dx = (peaks.primary_loc.0 as f64 - zero_off) * f as f64;
            let dy = (peaks.primary_loc.1 as f64 - zero_off) * f as f64;
            Ok(MatchRecord {
                node: (nx, ny),
                displacement: (dx, dy),
                norm: (dx * dx + dy * dy).sqrt(),
                r_max: peaks.r_max,
                r_delta: peaks.r_delta,
                truth: None,
                label: Label::Unknown,
                flagged: false,
                condition: condition_name.to_string(),
                pair_id: pair_id.to_string(),
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(skip) => skipped.push(skip),
        }
    }
    Ok(MatchOutcome { records, skipped })
}

/// Fills ground truth and labels from the stack's warp fields: a record
/// is false when its displacement strays farther than `tolerance` from
/// the truth.
pub fn label_records(
    records: &mut [MatchRecord],
    stack: &SynthStack,
    template_index: usize,
    source_index: usize,
    tolerance: f64,
) {
    for rec in records.iter_mut() {
        let truth = truth_displacement(
            &stack.warps[template_index],
            &stack.warps[source_index],
            (rec.node.0 as f64, rec.node.1 as f64),
        );
        let err =
            ((rec.displacement.0 - truth.0).powi(2) + (rec.displacement.1 - truth.1).powi(2))
                .sqrt();
        rec.truth = Some(truth);
        rec.label = if err > tolerance { Label::False } else { Label::True };
    }
}

/// Flags records whose displacement deviates from the componentwise
/// median of their grid neighbors (within `radius`) by more than
/// `threshold`. Records with fewer than 3 neighbors are left unflagged.
/// Returns the number of flags set.
pub fn flag_neighbor_outliers(
    records: &mut [MatchRecord],
    radius: f64,
    threshold: f64,
) -> usize {
    let nodes: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.node.0 as f64, r.node.1 as f64))
        .collect();
    let displacements: Vec<(f64, f64)> = records.iter().map(|r| r.displacement).collect();

    let mut flags = 0usize;
    for i in 0..records.len() {
        let mut dxs = Vec::new();
        let mut dys = Vec::new();
        for j in 0..records.len() {
            if i == j {
                continue;
            }
            let d = ((nodes[i].0 - nodes[j].0).powi(2) + (nodes[i].1 - nodes[j].1).powi(2)).sqrt();
            if d <= radius {
                dxs.push(displacements[j].0);
                dys.push(displacements[j].1);
            }
        }
        if dxs.len() < 3 {
            records[i].flagged = false;
            continue;
        }
        let med = (median(&mut dxs), median(&mut dys));
        let dev = ((displacements[i].0 - med.0).powi(2) + (displacements[i].1 - med.1).powi(2))
            .sqrt();
        records[i].flagged = dev > threshold;
        if records[i].flagged {
            flags += 1;
        }
    }
    flags
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
