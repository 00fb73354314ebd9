//! Experiment machinery: synthetic section stacks with known warp fields,
//! triangular-grid template matching over section pairs, match criteria,
//! neighbor-deviation flagging, rejection-efficiency curves, and
//! summaries.

mod benchmark;
mod eval;
mod matching;
mod stack_io;
mod synth;

pub use benchmark::{false_count, run_condition, tune_on_stack, tuning_pairs, BenchmarkSpec};
pub use eval::{
    best_zero_error_threshold, read_records_csv, rejection_curve, summarize,
    write_histograms_csv, write_records_csv, write_rejection_csv, write_summary_json,
    ConditionSummary, Criterion, CurvePoint, HistogramRow, Summary,
};
pub use matching::{
    flag_neighbor_outliers, label_records, make_grid, match_pair, match_prepared, GridSpec,
    MatchConfig, MatchOutcome, SkippedNode,
};
pub use stack_io::{load_stack, save_stack};
pub use synth::{
    generate_stack, training_dataset, truth_displacement, SynthSpec, SynthStack, WarpField,
};

use serde::{Deserialize, Serialize};

/// Ground-truth verdict for one match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    True,
    False,
    Unknown,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::True => "true",
            Label::False => "false",
            Label::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "true" => Some(Label::True),
            "false" => Some(Label::False),
            "unknown" => Some(Label::Unknown),
            _ => None,
        }
    }
}

/// One grid-point match between a section pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    /// Grid node at full resolution.
    pub node: (usize, usize),
    /// Template-to-match displacement at full resolution.
    pub displacement: (f64, f64),
    /// Euclidean norm of the displacement.
    pub norm: f64,
    pub r_max: f64,
    pub r_delta: f64,
    /// Ground-truth displacement when warp fields are available.
    pub truth: Option<(f64, f64)>,
    pub label: Label,
    /// Set by neighbor-deviation screening.
    pub flagged: bool,
    pub condition: String,
    pub pair_id: String,
}
