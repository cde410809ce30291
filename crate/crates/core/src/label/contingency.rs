use std::collections::HashMap;

use super::{LabelMap, VOID_ID};
use crate::Result;

/// Pixel overlap counts for every co-occurring `(pred id, gt id)` pair,
/// void pairings included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// Sorted by `(pred, gt)`.
    counts: Vec<((u32, u32), u64)>,
    /// Sorted by id; void included.
    pred_areas: Vec<(u32, u64)>,
    gt_areas: Vec<(u32, u64)>,
}

impl ContingencyTable {
    pub fn new(pred: &LabelMap, gt: &LabelMap) -> Result<Self> {
        pred.check_same_dims(gt)?;
        let mut table: HashMap<(u32, u32), u64> = HashMap::new();
        // Runs of identical pairs are the common case in label maps.
        let mut run_key = None;
        let mut run_len = 0u64;
        for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
            if run_key == Some((p, g)) {
                run_len += 1;
                continue;
            }
            if let Some(key) = run_key {
                *table.entry(key).or_default() += run_len;
            }
            run_key = Some((p, g));
            run_len = 1;
        }
        if let Some(key) = run_key {
            *table.entry(key).or_default() += run_len;
        }

        let mut counts: Vec<_> = table.into_iter().collect();
        counts.sort_unstable_by_key(|&(k, _)| k);

        let mut pred_areas: HashMap<u32, u64> = HashMap::new();
        let mut gt_areas: HashMap<u32, u64> = HashMap::new();
        for &((p, g), n) in &counts {
            *pred_areas.entry(p).or_default() += n;
            *gt_areas.entry(g).or_default() += n;
        }
        let sorted = |m: HashMap<u32, u64>| {
            let mut v: Vec<_> = m.into_iter().collect();
            v.sort_unstable_by_key(|&(id, _)| id);
            v
        };
        Ok(Self {
            counts,
            pred_areas: sorted(pred_areas),
            gt_areas: sorted(gt_areas),
        })
    }

    pub fn get(&self, pred: u32, gt: u32) -> u64 {
        self.counts
            .binary_search_by_key(&(pred, gt), |&(k, _)| k)
            .map(|i| self.counts[i].1)
            .unwrap_or(0)
    }

    /// Nonzero `((pred, gt), count)` entries in ascending key order.
    pub fn entries(&self) -> &[((u32, u32), u64)] {
        &self.counts
    }

    pub fn pred_area(&self, id: u32) -> u64 {
        lookup(&self.pred_areas, id)
    }

    pub fn gt_area(&self, id: u32) -> u64 {
        lookup(&self.gt_areas, id)
    }

    /// Nonvoid predicted ids with their areas.
    pub fn pred_segments(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.pred_areas.iter().copied().filter(|&(id, _)| id != VOID_ID)
    }

    pub fn gt_segments(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.gt_areas.iter().copied().filter(|&(id, _)| id != VOID_ID)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&(_, n)| n).sum()
    }
}

fn lookup(v: &[(u32, u64)], id: u32) -> u64 {
    v.binary_search_by_key(&id, |&(k, _)| k)
        .map(|i| v[i].1)
        .unwrap_or(0)
}
