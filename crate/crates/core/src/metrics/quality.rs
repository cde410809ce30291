use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MatchResult;
use crate::label::{split_panoptic_id, BinaryMask, CategoryTable, LabelMap, VOID_ID};
use crate::{Error, Result};

/// Running totals for class-agnostic quality. Frames are folded in a fixed
/// order so the floating-point IoU sum is reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CaCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

impl CaCounts {
    pub fn from_match(m: &MatchResult) -> Self {
        Self {
            tp: m.tp.len() as u64,
            fp: m.fp.len() as u64,
            fn_: m.fn_.len() as u64,
            iou_sum: m.iou_sum(),
        }
    }

    pub fn merge(&mut self, other: &CaCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum += other.iou_sum;
    }

    pub fn report(&self) -> CaReport {
        let sq = if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        };
        let rq = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        CaReport {
            sq,
            rq,
            caq: sq * rq,
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// SQ, RQ and CAQ in `[0, 1]`, with `caq == sq * rq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaReport {
    pub sq: f64,
    pub rq: f64,
    pub caq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl CaReport {
    /// A report built from already-known SQ and RQ, e.g. published table rows.
    pub fn from_sq_rq(sq: f64, rq: f64) -> Self {
        Self {
            sq,
            rq,
            caq: sq * rq,
            tp: 0,
            fp: 0,
            fn_: 0,
        }
    }
}

pub fn compute_caq(m: &MatchResult) -> CaReport {
    CaCounts::from_match(m).report()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

/// Per-category totals keyed by category id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PanopticCounts {
    pub per_class: BTreeMap<u32, ClassCounts>,
}

impl PanopticCounts {
    /// Folds in a class-aware match over panoptic-encoded ids.
    pub fn add(&mut self, m: &MatchResult) {
        let cat = |id: u32| split_panoptic_id(id).0;
        for t in &m.tp {
            let c = self.per_class.entry(cat(t.gt)).or_default();
            c.tp += 1;
            c.iou_sum += t.iou;
        }
        for &id in &m.fp {
            self.per_class.entry(cat(id)).or_default().fp += 1;
        }
        for &id in &m.fn_ {
            self.per_class.entry(cat(id)).or_default().fn_ += 1;
        }
    }

    pub fn merge(&mut self, other: &PanopticCounts) {
        for (&k, o) in &other.per_class {
            let c = self.per_class.entry(k).or_default();
            c.tp += o.tp;
            c.fp += o.fp;
            c.fn_ += o.fn_;
            c.iou_sum += o.iou_sum;
        }
    }

    pub fn report(&self, cats: &CategoryTable) -> Result<PanopticReport> {
        cats.validate_for_panoptic()?;
        let mut per_class = BTreeMap::new();
        for (&cid, c) in &self.per_class {
            if cats.get(cid).is_none() {
                return Err(Error::UnknownCategory {
                    id: cid * crate::label::PANOPTIC_DIVISOR,
                    category: cid,
                });
            }
            if c.tp + c.fp + c.fn_ == 0 {
                continue;
            }
            let denom = c.tp as f64 + 0.5 * c.fp as f64 + 0.5 * c.fn_ as f64;
            let sq = if c.tp == 0 { 0.0 } else { c.iou_sum / c.tp as f64 };
            per_class.insert(
                cid,
                ClassQuality {
                    pq: c.iou_sum / denom,
                    sq,
                    rq: c.tp as f64 / denom,
                    tp: c.tp,
                    fp: c.fp,
                    fn_: c.fn_,
                },
            );
        }
        let mean = |isthing: Option<bool>| {
            let pqs: Vec<f64> = per_class
                .iter()
                .filter(|(cid, _)| isthing.is_none_or(|t| cats.get(**cid).unwrap().isthing == t))
                .map(|(_, q)| q.pq)
                .collect();
            (!pqs.is_empty()).then(|| pqs.iter().sum::<f64>() / pqs.len() as f64)
        };
        Ok(PanopticReport {
            pq_all: mean(None),
            pq_th: mean(Some(true)),
            pq_st: mean(Some(false)),
            per_class,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassQuality {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Per-class PQ and its means. A group mean is `None` when no class of that
/// group occurs in either gt or prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticReport {
    pub per_class: BTreeMap<u32, ClassQuality>,
    pub pq_all: Option<f64>,
    pub pq_th: Option<f64>,
    pub pq_st: Option<f64>,
}

pub fn compute_pq(m: &MatchResult, cats: &CategoryTable) -> Result<PanopticReport> {
    let mut counts = PanopticCounts::default();
    counts.add(m);
    counts.report(cats)
}

/// Intersection and union pixel totals of unknown-object masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CaIouCounts {
    pub intersection: u64,
    pub union: u64,
}

impl CaIouCounts {
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        let (intersection, union) = pred.overlap(gt)?;
        Ok(Self { intersection, union })
    }

    pub fn merge(&mut self, other: &CaIouCounts) {
        self.intersection += other.intersection;
        self.union += other.union;
    }

    /// `1.0` when both masks are empty: nothing to find, nothing claimed.
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

pub fn compute_ca_iou(pred_unknown: &BinaryMask, gt_unknown: &BinaryMask) -> Result<f64> {
    Ok(CaIouCounts::from_masks(pred_unknown, gt_unknown)?.iou())
}

/// Per-class intersection and union for semantic label maps with ids
/// `0` = ignore, `1..=C` known classes and `C + 1` unknown. Pixels ignored
/// in the ground truth do not count for either side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticCounts {
    /// Index `k` holds class id `k + 1`; the last entry is the unknown class.
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
}

impl SemanticCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            intersection: vec![0; num_classes + 1],
            union: vec![0; num_classes + 1],
        }
    }

    pub fn from_maps(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<Self> {
        pred.check_same_dims(gt)?;
        let mut c = Self::new(num_classes);
        let n = num_classes as u32 + 1;
        for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
            if g == VOID_ID {
                continue;
            }
            if g > n || p > n {
                return Err(Error::OutOfRange(format!("semantic id {} above {n}", g.max(p))));
            }
            if p == g {
                c.intersection[g as usize - 1] += 1;
                c.union[g as usize - 1] += 1;
            } else {
                c.union[g as usize - 1] += 1;
                if p != VOID_ID {
                    c.union[p as usize - 1] += 1;
                }
            }
        }
        Ok(c)
    }

    pub fn num_classes(&self) -> usize {
        self.union.len() - 1
    }

    pub fn merge(&mut self, other: &SemanticCounts) -> Result<()> {
        if other.union.len() != self.union.len() {
            return Err(Error::LengthMismatch {
                expected: self.union.len(),
                actual: other.union.len(),
            });
        }
        for k in 0..self.union.len() {
            self.intersection[k] += other.intersection[k];
            self.union[k] += other.union[k];
        }
        Ok(())
    }

    /// Mean IoU over known classes that occur in prediction or ground truth.
    pub fn miou(&self) -> Option<f64> {
        let ious: Vec<f64> = (0..self.num_classes())
            .filter(|&k| self.union[k] > 0)
            .map(|k| self.intersection[k] as f64 / self.union[k] as f64)
            .collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// Binary IoU of the unknown class.
    pub fn ca_iou(&self) -> f64 {
        let k = self.num_classes();
        CaIouCounts {
            intersection: self.intersection[k],
            union: self.union[k],
        }
        .iou()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Category;
    use crate::metrics::TpPair;

    fn tp(pred: u32, gt: u32, iou: f64) -> TpPair {
        TpPair { pred, gt, iou }
    }

    fn cats() -> CategoryTable {
        CategoryTable::new(vec![
            Category { id: 7, name: "road".into(), isthing: false },
            Category { id: 26, name: "car".into(), isthing: true },
        ])
        .unwrap()
    }

    #[test]
    fn caq_from_two_tps_and_two_fns() {
        let m = MatchResult {
            tp: vec![tp(1, 1, 0.8), tp(2, 2, 0.6)],
            fn_: vec![3, 4],
            ..Default::default()
        };
        let r = compute_caq(&m);
        assert!((r.sq - 0.7).abs() < 1e-15);
        assert_eq!(r.rq, 0.5);
        assert!((r.caq - 0.35).abs() < 1e-15);
        assert_eq!(r.caq, r.sq * r.rq);
    }

    #[test]
    fn empty_match_is_zero() {
        let r = compute_caq(&MatchResult::default());
        assert_eq!((r.sq, r.rq, r.caq), (0.0, 0.0, 0.0));
    }

    #[test]
    fn published_row_caq() {
        let r = CaReport::from_sq_rq(82.4, 75.4);
        assert!((r.caq / 100.0 - 62.1296).abs() < 1e-9);
    }

    #[test]
    fn unmatched_prediction_leaves_caq_but_lowers_pq() {
        let base = MatchResult {
            class_aware: true,
            tp: vec![tp(26_001, 26_001, 0.9)],
            fn_: vec![26_002],
            ..Default::default()
        };
        let mut extra = base.clone();
        extra.fp.push(26_003);
        let (a, b) = (compute_caq(&base), compute_caq(&extra));
        assert_eq!((a.sq, a.rq, a.caq), (b.sq, b.rq, b.caq));
        let pa = compute_pq(&base, &cats()).unwrap().pq_all.unwrap();
        let pb = compute_pq(&extra, &cats()).unwrap().pq_all.unwrap();
        assert!(pb < pa);
    }

    #[test]
    fn pq_single_class() {
        let m = MatchResult {
            class_aware: true,
            tp: vec![tp(26_001, 26_001, 0.75)],
            fp: vec![26_005],
            fn_: vec![26_002],
            ..Default::default()
        };
        let r = compute_pq(&m, &cats()).unwrap();
        assert_eq!(r.per_class[&26].pq, 0.375);
        assert_eq!(r.pq_th, Some(0.375));
        assert_eq!(r.pq_st, None);
        assert_eq!(r.pq_all, Some(0.375));
    }

    #[test]
    fn pq_perfect_and_empty_predictions() {
        let perfect = MatchResult {
            class_aware: true,
            tp: vec![tp(26_001, 26_001, 1.0), tp(7_000, 7_000, 1.0)],
            ..Default::default()
        };
        let r = compute_pq(&perfect, &cats()).unwrap();
        assert!(r.per_class.values().all(|q| q.pq == 1.0));
        assert_eq!((r.pq_th, r.pq_st), (Some(1.0), Some(1.0)));

        let none = MatchResult {
            class_aware: true,
            fn_: vec![26_001, 7_000],
            ..Default::default()
        };
        assert_eq!(compute_pq(&none, &cats()).unwrap().pq_all, Some(0.0));
    }

    #[test]
    fn pq_errors() {
        let m = MatchResult { fn_: vec![99_001], ..Default::default() };
        assert!(matches!(compute_pq(&m, &cats()), Err(Error::UnknownCategory { category: 99, .. })));
        assert!(matches!(
            compute_pq(&MatchResult::default(), &CategoryTable::default()),
            Err(Error::EmptyCategoryTable)
        ));
    }

    #[test]
    fn ca_iou_cases() {
        let sq = |y0: usize| BinaryMask::from_fn(20, 20, |x, y| x < 10 && (y0..y0 + 10).contains(&y));
        assert_eq!(compute_ca_iou(&sq(0), &sq(0)).unwrap(), 1.0);
        assert!((compute_ca_iou(&sq(0), &sq(5)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(compute_ca_iou(&BinaryMask::empty(20, 20), &sq(0)).unwrap(), 0.0);
        let e = BinaryMask::empty(4, 4);
        assert_eq!(compute_ca_iou(&e, &e).unwrap(), 1.0);
        assert!(compute_ca_iou(&e, &BinaryMask::empty(4, 5)).is_err());
    }

    #[test]
    fn semantic_counts() {
        // Classes 1, 2 known; 3 unknown; 0 ignored.
        let gt = LabelMap::new(6, 1, vec![1, 1, 2, 3, 3, 0]).unwrap();
        let pred = LabelMap::new(6, 1, vec![1, 2, 2, 3, 1, 3]).unwrap();
        let c = SemanticCounts::from_maps(&pred, &gt, 2).unwrap();
        assert_eq!(c.intersection, vec![1, 1, 1]);
        assert_eq!(c.union, vec![3, 2, 2]);
        assert!((c.miou().unwrap() - (1.0 / 3.0 + 0.5) / 2.0).abs() < 1e-15);
        assert_eq!(c.ca_iou(), 0.5);
        assert_eq!(SemanticCounts::new(2).miou(), None);
        assert_eq!(SemanticCounts::new(2).ca_iou(), 1.0);
        let bad = LabelMap::new(6, 1, vec![4; 6]).unwrap();
        assert!(SemanticCounts::from_maps(&bad, &gt, 2).is_err());
    }
}
