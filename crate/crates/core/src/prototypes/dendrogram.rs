use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dendrogram, Merge};
use crate::{Error, Result};

/// Nested JSON form of a dendrogram. Node numbering follows [`Merge`]:
/// leaves `0..n`, the i-th merge is node `n + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DendrogramNode {
    Merge {
        node: usize,
        height: f64,
        size: usize,
        children: Box<[DendrogramNode; 2]>,
    },
    Leaf {
        node: usize,
        class_id: u32,
        name: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Document {
    leaves: usize,
    root: DendrogramNode,
}

fn build(d: &Dendrogram, names: &BTreeMap<u32, String>, node: usize) -> DendrogramNode {
    let n = d.leaves.len();
    if node < n {
        let class_id = d.leaves[node];
        return DendrogramNode::Leaf {
            node,
            class_id,
            name: names.get(&class_id).cloned().unwrap_or_else(|| class_id.to_string()),
        };
    }
    let m = &d.merges[node - n];
    DendrogramNode::Merge {
        node,
        height: m.height,
        size: m.size,
        children: Box::new([build(d, names, m.left), build(d, names, m.right)]),
    }
}

/// Nested JSON tree with class names (falling back to the id) and merge heights.
pub fn serialize_dendrogram(d: &Dendrogram, names: &BTreeMap<u32, String>) -> Result<serde_json::Value> {
    d.validate()?;
    let root = build(d, names, 2 * d.leaves.len() - 2);
    Ok(serde_json::to_value(Document {
        leaves: d.leaves.len(),
        root,
    })?)
}

/// Inverse of [`serialize_dendrogram`]; names are returned alongside.
pub fn deserialize_dendrogram(v: &serde_json::Value) -> Result<(Dendrogram, BTreeMap<u32, String>)> {
    let doc: Document = serde_json::from_value(v.clone())?;
    let n = doc.leaves;
    if n < 2 {
        return Err(Error::InvalidDistanceMatrix("dendrogram needs at least two leaves".into()));
    }
    let mut leaves = vec![None; n];
    let mut merges = vec![None; n - 1];
    let mut names = BTreeMap::new();
    let mut stack = vec![&doc.root];
    while let Some(node) = stack.pop() {
        match node {
            DendrogramNode::Leaf { node, class_id, name } => {
                let slot = leaves
                    .get_mut(*node)
                    .ok_or_else(|| Error::InvalidDistanceMatrix(format!("leaf node {node} out of range")))?;
                *slot = Some(*class_id);
                names.insert(*class_id, name.clone());
            }
            DendrogramNode::Merge { node, height, size, children } => {
                let slot = node
                    .checked_sub(n)
                    .and_then(|i| merges.get_mut(i))
                    .ok_or_else(|| Error::InvalidDistanceMatrix(format!("merge node {node} out of range")))?;
                let id = |c: &DendrogramNode| match c {
                    DendrogramNode::Leaf { node, .. } | DendrogramNode::Merge { node, .. } => *node,
                };
                *slot = Some(Merge {
                    left: id(&children[0]),
                    right: id(&children[1]),
                    height: *height,
                    size: *size,
                });
                stack.extend(children.iter());
            }
        }
    }
    let missing = || Error::InvalidDistanceMatrix("dendrogram document is missing nodes".into());
    let d = Dendrogram {
        leaves: leaves.into_iter().collect::<Option<_>>().ok_or_else(missing)?,
        merges: merges.into_iter().collect::<Option<_>>().ok_or_else(missing)?,
    };
    d.validate()?;
    Ok((d, names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototypes::{agglomerative_cluster, pairwise_distances, Linkage, Prototype};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn heights(v: &serde_json::Value, out: &mut Vec<f64>) {
        if let Some(h) = v.get("height") {
            out.push(h.as_f64().unwrap());
        }
        for key in ["root", "children"] {
            match v.get(key) {
                Some(serde_json::Value::Array(cs)) => cs.iter().for_each(|c| heights(c, out)),
                Some(c) => heights(c, out),
                None => {}
            }
        }
    }

    fn cluster(xs: &[Vec<f64>]) -> Dendrogram {
        let ps: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Prototype { class_id: 100 + i as u32, vector: x.clone(), support: 1 })
            .collect();
        let leaves: Vec<u32> = ps.iter().map(|p| p.class_id).collect();
        agglomerative_cluster(&pairwise_distances(&ps).unwrap(), Linkage::Average, &leaves).unwrap()
    }

    #[test]
    fn single_merge_document() {
        let d = cluster(&[vec![0.0], vec![1.0]]);
        let names = BTreeMap::from([(100, "barrel".to_string())]);
        let v = serialize_dendrogram(&d, &names).unwrap();
        assert_eq!(v["root"]["children"][0]["name"], "barrel");
        assert_eq!(v["root"]["children"][1]["name"], "101");
        assert_eq!(v["root"]["height"], 1.0);
    }

    #[test]
    fn three_point_heights() {
        let d = cluster(&[vec![0.0], vec![1.0], vec![10.0]]);
        let v = serialize_dendrogram(&d, &BTreeMap::new()).unwrap();
        let mut h = Vec::new();
        heights(&v, &mut h);
        h.sort_by(f64::total_cmp);
        assert_eq!(h, vec![1.0, 9.5]);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let n = rng.random_range(2..10);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)]).collect();
            let d = cluster(&xs);
            let names: BTreeMap<u32, String> = d.leaves.iter().map(|&c| (c, format!("obj{c}"))).collect();
            let v = serialize_dendrogram(&d, &names).unwrap();
            let text = serde_json::to_string(&v).unwrap();
            let (back, back_names) = deserialize_dendrogram(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(back, d);
            assert_eq!(back_names, names);
        }
    }

    #[test]
    fn rejects_incomplete_documents() {
        let v = serde_json::json!({"leaves": 3, "root": {"node": 0, "class_id": 1, "name": "a"}});
        assert!(deserialize_dendrogram(&v).is_err());
    }
}
