use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(format!("unknown linkage {other:?} (single, complete, average)")),
        }
    }
}

/// Merge of two nodes. Leaves are nodes `0..n`; the i-th merge creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Leaves under the new node.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    /// Class id of each leaf node.
    pub leaves: Vec<u32>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Checks the merge list forms one binary tree over all leaves with
    /// non-decreasing heights.
    pub fn validate(&self) -> Result<()> {
        let n = self.leaves.len();
        let bad = |m: String| Err(Error::InvalidDistanceMatrix(m));
        if n < 2 || self.merges.len() != n - 1 {
            return bad(format!("{} merges for {n} leaves", self.merges.len()));
        }
        let mut used = vec![false; 2 * n - 1];
        let mut size = vec![1usize; 2 * n - 1];
        for (i, m) in self.merges.iter().enumerate() {
            let node = n + i;
            for c in [m.left, m.right] {
                if c >= node || used[c] {
                    return bad(format!("merge {i} reuses or forward-references node {c}"));
                }
                used[c] = true;
            }
            size[node] = size[m.left] + size[m.right];
            if size[node] != m.size {
                return bad(format!("merge {i} declares size {} but covers {}", m.size, size[node]));
            }
            if i > 0 && m.height < self.merges[i - 1].height {
                return bad(format!("merge heights decrease at {i}"));
            }
        }
        Ok(())
    }

    /// Flat clusterings after each merge, each a sorted list of sorted leaf sets.
    pub fn partitions(&self) -> Vec<Vec<Vec<usize>>> {
        let n = self.leaves.len();
        let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
        let mut out = Vec::with_capacity(self.merges.len());
        for m in &self.merges {
            let mut joined = members[m.left].take().unwrap();
            joined.extend(members[m.right].take().unwrap());
            joined.sort_unstable();
            members.push(Some(joined));
            let mut part: Vec<Vec<usize>> = members.iter().flatten().cloned().collect();
            part.sort();
            out.push(part);
        }
        out
    }
}

/// Hierarchical agglomerative clustering over a distance matrix.
///
/// At every step the closest pair of active nodes merges; exact ties go to
/// the smallest `(left, right)` node pair. Cluster distances are updated with
/// the Lance–Williams recurrence for the chosen linkage.
pub fn agglomerative_cluster(d: &DistanceMatrix, linkage: Linkage, leaves: &[u32]) -> Result<Dendrogram> {
    let n = d.len();
    if n < 2 {
        return Err(Error::TooFewItems { required: 2, actual: n });
    }
    if leaves.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: leaves.len() });
    }
    let total = 2 * n - 1;
    let mut dist = vec![f64::NAN; total * total];
    for i in 0..n {
        for j in 0..n {
            dist[i * total + j] = d.get(i, j);
        }
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let v = dist[a * total + b];
                if best.is_none_or(|(bv, _, _)| v < bv) {
                    best = Some((v, a, b));
                }
            }
        }
        let (height, a, b) = best.unwrap();
        let node = n + step;
        size[node] = size[a] + size[b];
        active.retain(|&c| c != a && c != b);
        for &c in &active {
            let (da, db) = (dist[a * total + c], dist[b * total + c]);
            let v = match linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => (size[a] as f64 * da + size[b] as f64 * db) / size[node] as f64,
            };
            dist[node * total + c] = v;
            dist[c * total + node] = v;
        }
        // New nodes carry the largest id, so `active` stays sorted.
        active.push(node);
        merges.push(Merge {
            left: a,
            right: b,
            height,
            size: size[node],
        });
    }

    Ok(Dendrogram {
        leaves: leaves.to_vec(),
        merges,
    })
}
