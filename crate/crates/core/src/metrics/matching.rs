use serde::{Deserialize, Serialize};

use super::MATCH_IOU_THRESHOLD;
use crate::label::{split_panoptic_id, ContingencyTable, LabelMap, VOID_ID};
use crate::Result;

/// Treatment of gt void pixels (id 0) during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoidPolicy {
    /// Predicted pixels on gt void leave the IoU union, and predictions
    /// lying more than half on void are dropped instead of counted as FP.
    #[default]
    Ignore,
    /// Void is ordinary background: plain set IoU, every unmatched
    /// prediction is a FP.
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchOptions {
    /// Require equal categories (panoptic id encoding) for a match.
    pub class_aware: bool,
    pub void_policy: VoidPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpPair {
    pub pred: u32,
    pub gt: u32,
    pub iou: f64,
}

/// Outcome of matching one prediction map against one gt map.
///
/// Every predicted segment is in exactly one of `tp`, `fp`, `void_filtered`;
/// every gt segment is in exactly one of `tp`, `fn`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub class_aware: bool,
    /// Sorted by pred id.
    pub tp: Vec<TpPair>,
    pub fp: Vec<u32>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u32>,
    /// Predictions dropped by [`VoidPolicy::Ignore`].
    pub void_filtered: Vec<u32>,
}

impl MatchResult {
    pub fn iou_sum(&self) -> f64 {
        self.tp.iter().map(|t| t.iou).sum()
    }
}

pub fn match_instances(pred: &LabelMap, gt: &LabelMap, opts: MatchOptions) -> Result<MatchResult> {
    let table = ContingencyTable::new(pred, gt)?;
    let entries = table.entries();

    let mut tp = Vec::new();
    let mut fp = Vec::new();
    let mut void_filtered = Vec::new();
    let mut gt_matched = std::collections::HashSet::new();

    // Entries are sorted by (pred, gt): each predicted id owns a contiguous run.
    let mut start = entries.partition_point(|&((p, _), _)| p == VOID_ID);
    while start < entries.len() {
        let pid = entries[start].0 .0;
        let end = start + entries[start..].partition_point(|&((p, _), _)| p == pid);
        let p_area = table.pred_area(pid);
        let on_void = table.get(pid, VOID_ID);

        let mut matched = None;
        for &((_, gid), inter) in &entries[start..end] {
            if gid == VOID_ID {
                continue;
            }
            if opts.class_aware && split_panoptic_id(pid).0 != split_panoptic_id(gid).0 {
                continue;
            }
            let mut union = p_area + table.gt_area(gid) - inter;
            if opts.void_policy == VoidPolicy::Ignore {
                union -= on_void;
            }
            let iou = inter as f64 / union as f64;
            if iou > MATCH_IOU_THRESHOLD {
                // At most one gt can clear the threshold for a given pred.
                matched = Some(TpPair { pred: pid, gt: gid, iou });
                break;
            }
        }

        match matched {
            Some(pair) => {
                gt_matched.insert(pair.gt);
                tp.push(pair);
            }
            None if opts.void_policy == VoidPolicy::Ignore && 2 * on_void > p_area => {
                void_filtered.push(pid)
            }
            None => fp.push(pid),
        }
        start = end;
    }

    let fn_ = table
        .gt_segments()
        .map(|(id, _)| id)
        .filter(|id| !gt_matched.contains(id))
        .collect();

    Ok(MatchResult {
        class_aware: opts.class_aware,
        tp,
        fp,
        fn_,
        void_filtered,
    })
}
