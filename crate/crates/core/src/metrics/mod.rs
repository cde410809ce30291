//! Instance matching under the IoU > 0.5 rule and the quality measures built
//! on it: SQ, RQ and CAQ for class-agnostic output, PQ split into things and
//! stuff for panoptic output, and the binary CA-IoU for unknown-object masks.
//!
//! RQ for class-agnostic quality is `|TP| / (|TP| + |FN|)`; unmatched
//! predictions are reported but do not enter it. PQ keeps the usual
//! `½|FP| + ½|FN|` denominator.

mod matching;
mod quality;

pub use matching::{match_instances, MatchOptions, MatchResult, TpPair, VoidPolicy};
pub use quality::{
    compute_ca_iou, compute_caq, compute_pq, CaCounts, CaIouCounts, CaReport, ClassCounts,
    ClassQuality, PanopticCounts, PanopticReport, SemanticCounts,
};

/// Matches strictly above this IoU are true positives.
pub const MATCH_IOU_THRESHOLD: f64 = 0.5;
