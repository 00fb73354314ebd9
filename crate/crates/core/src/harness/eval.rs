//! Rejection-efficiency curves, per-condition summaries, and the record
//! CSV format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::{Error, Result};

use super::{Label, MatchRecord};

/// Match-quality criteria available for thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Displacement norm; rejected when *above* the threshold.
    Norm,
    /// Primary peak height; rejected when *below* the threshold.
    RMax,
    /// Peak gap; rejected when *below* the threshold.
    RDelta,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Norm => "norm",
            Criterion::RMax => "r_max",
            Criterion::RDelta => "r_delta",
        }
    }

    fn value(&self, r: &MatchRecord) -> f64 {
        match self {
            Criterion::Norm => r.norm,
            Criterion::RMax => r.r_max,
            Criterion::RDelta => r.r_delta,
        }
    }

    fn rejects(&self, value: f64, threshold: f64) -> bool {
        match self {
            Criterion::Norm => value > threshold,
            Criterion::RMax | Criterion::RDelta => value < threshold,
        }
    }
}

/// One point of a rejection-efficiency curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    /// Fraction of true matches rejected at this threshold.
    pub rejected_true_frac: f64,
    /// Error rate among the kept records (0 when nothing is kept).
    pub kept_error_rate: f64,
    pub kept: usize,
    /// True when no records survive the threshold.
    pub degenerate: bool,
}

/// Sweeps thresholds over labeled records. Every record must carry a
/// true/false label.
pub fn rejection_curve(
    records: &[MatchRecord],
    criterion: Criterion,
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records".into()));
    }
    if records.iter().any(|r| r.label == Label::Unknown) {
        return Err(Error::InvalidArgument(
            "rejection curves need fully labeled records".into(),
        ));
    }
    let total_true = records.iter().filter(|r| r.label == Label::True).count();
    let mut curve = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut rejected_true = 0usize;
        let mut kept = 0usize;
        let mut kept_false = 0usize;
        for r in records {
            if criterion.rejects(criterion.value(r), t) {
                if r.label == Label::True {
                    rejected_true += 1;
                }
            } else {
                kept += 1;
                if r.label == Label::False {
                    kept_false += 1;
                }
            }
        }
        let degenerate = kept == 0;
        curve.push(CurvePoint {
            threshold: t,
            rejected_true_frac: if total_true == 0 {
                0.0
            } else {
                rejected_true as f64 / total_true as f64
            },
            kept_error_rate: if degenerate {
                0.0
            } else {
                kept_false as f64 / kept as f64
            },
            kept,
            degenerate,
        });
    }
    Ok(curve)
}

/// Smallest threshold (from `thresholds`) that keeps zero false matches,
/// with the fraction of true matches it rejects.
pub fn best_zero_error_threshold(
    records: &[MatchRecord],
    criterion: Criterion,
    thresholds: &[f64],
) -> Result<Option<(f64, f64)>> {
    let curve = rejection_curve(records, criterion, thresholds)?;
    Ok(curve
        .iter()
        .filter(|p| p.kept_error_rate == 0.0 && !p.degenerate)
        .map(|p| (p.threshold, p.rejected_true_frac))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub total: usize,
    pub true_count: usize,
    pub false_count: usize,
    pub unknown_count: usize,
    pub error_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub condition: String,
    pub criterion: &'static str,
    pub label: Label,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub conditions: Vec<ConditionSummary>,
    pub histograms: Vec<HistogramRow>,
}

const HIST_BINS: usize = 40;

fn histogram_range(criterion: Criterion) -> (f64, f64) {
    match criterion {
        Criterion::Norm => (0.0, 200.0),
        Criterion::RMax => (-1.0, 1.0),
        Criterion::RDelta => (0.0, 2.0),
    }
}

/// Per-condition error counts plus binned histograms of the three
/// criteria split by label. Out-of-range values land in the edge bins.
pub fn summarize(records: &[MatchRecord]) -> Summary {
    let mut by_condition: BTreeMap<&str, Vec<&MatchRecord>> = BTreeMap::new();
    for r in records {
        by_condition.entry(&r.condition).or_default().push(r);
    }

    let mut conditions = Vec::new();
    let mut histograms = Vec::new();
    for (condition, recs) in &by_condition {
        let true_count = recs.iter().filter(|r| r.label == Label::True).count();
        let false_count = recs.iter().filter(|r| r.label == Label::False).count();
        let unknown_count = recs.len() - true_count - false_count;
        let labeled = true_count + false_count;
        conditions.push(ConditionSummary {
            condition: condition.to_string(),
            total: recs.len(),
            true_count,
            false_count,
            unknown_count,
            error_pct: if labeled == 0 {
                0.0
            } else {
                100.0 * false_count as f64 / labeled as f64
            },
        });

        for criterion in [Criterion::Norm, Criterion::RMax, Criterion::RDelta] {
            let (lo, hi) = histogram_range(criterion);
            let width = (hi - lo) / HIST_BINS as f64;
            for label in [Label::True, Label::False] {
                let mut bins = vec![0usize; HIST_BINS];
                for r in recs.iter().filter(|r| r.label == label) {
                    let v = criterion.value(r);
                    let bin = (((v - lo) / width).floor() as isize)
                        .clamp(0, HIST_BINS as isize - 1) as usize;
                    bins[bin] += 1;
                }
                for (i, &count) in bins.iter().enumerate() {
                    histograms.push(HistogramRow {
                        condition: condition.to_string(),
                        criterion: criterion.name(),
                        label,
                        bin_lo: lo + i as f64 * width,
                        bin_hi: lo + (i + 1) as f64 * width,
                        count,
                    });
                }
            }
        }
    }
    Summary {
        conditions,
        histograms,
    }
}

/// Fixed column order:
/// `node_x,node_y,dx,dy,norm,r_max,r_delta,label,flagged,condition,pair_id`.
pub fn write_records_csv(records: &[MatchRecord], path: &Path) -> Result<()> {
    let mut out =
        String::from("node_x,node_y,dx,dy,norm,r_max,r_delta,label,flagged,condition,pair_id\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.node.0,
            r.node.1,
            r.displacement.0,
            r.displacement.1,
            r.norm,
            r.r_max,
            r.r_delta,
            r.label.as_str(),
            r.flagged,
            r.condition,
            r.pair_id
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the CSV written by [`write_records_csv`]. Ground truth is not
/// part of the format; labels round-trip as written.
pub fn read_records_csv(path: &Path) -> Result<Vec<MatchRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, "empty file"))?;
    if header != "node_x,node_y,dx,dy,norm,r_max,r_delta,label,flagged,condition,pair_id" {
        return Err(Error::parse(path, 0, "unexpected header"));
    }
    let mut records = Vec::new();
    let mut offset = header.len() + 1;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::parse(
                path,
                offset,
                format!("expected 11 fields, got {}", fields.len()),
            ));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::parse(path, offset, format!("bad number {s}")))
        };
        let parse_u = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(path, offset, format!("bad integer {s}")))
        };
        records.push(MatchRecord {
            node: (parse_u(fields[0])?, parse_u(fields[1])?),
            displacement: (parse_f(fields[2])?, parse_f(fields[3])?),
            norm: parse_f(fields[4])?,
            r_max: parse_f(fields[5])?,
            r_delta: parse_f(fields[6])?,
            truth: None,
            label: Label::parse(fields[7])
                .ok_or_else(|| Error::parse(path, offset, format!("bad label {}", fields[7])))?,
            flagged: fields[8]
                .parse()
                .map_err(|_| Error::parse(path, offset, format!("bad flag {}", fields[8])))?,
            condition: fields[9].to_string(),
            pair_id: fields[10].to_string(),
        });
        offset += line.len() + 1;
    }
    Ok(records)
}

/// Writes curves as `criterion,threshold,rejected_true_frac,error_rate,kept,degenerate`.
pub fn write_rejection_csv(
    curves: &[(Criterion, Vec<CurvePoint>)],
    path: &Path,
) -> Result<()> {
    let mut out = String::from("criterion,threshold,rejected_true_frac,error_rate,kept,degenerate\n");
    for (criterion, points) in curves {
        for p in points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                criterion.name(),
                p.threshold,
                p.rejected_true_frac,
                p.kept_error_rate,
                p.kept,
                p.degenerate
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes histogram rows as
/// `condition,criterion,label,bin_lo,bin_hi,count`.
pub fn write_histograms_csv(summary: &Summary, path: &Path) -> Result<()> {
    let mut out = String::from("condition,criterion,label,bin_lo,bin_hi,count\n");
    for h in &summary.histograms {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.condition,
            h.criterion,
            h.label.as_str(),
            h.bin_lo,
            h.bin_hi,
            h.count
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Summary JSON: per-condition counts plus histogram rows.
pub fn write_summary_json(summary: &Summary, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct HistOut<'a> {
        condition: &'a str,
        criterion: &'a str,
        label: &'a str,
        bin_lo: f64,
        bin_hi: f64,
        count: usize,
    }
    #[derive(Serialize)]
    struct Out<'a> {
        conditions: &'a [ConditionSummary],
        histograms: Vec<HistOut<'a>>,
    }
    let out = Out {
        conditions: &summary.conditions,
        histograms: summary
            .histograms
            .iter()
            .map(|h| HistOut {
                condition: &h.condition,
                criterion: h.criterion,
                label: h.label.as_str(),
                bin_lo: h.bin_lo,
                bin_hi: h.bin_hi,
                count: h.count,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&out)
        .map_err(|e| Error::InvalidArgument(format!("summary serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
