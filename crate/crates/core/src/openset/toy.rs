use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{predict_labels, EmbeddingMap, OpenSetParams, PixelLabel};
use crate::label::BinaryMask;
use crate::metrics::compute_ca_iou;
use crate::{Error, Result};

/// Isotropic 2-D Gaussian clusters: one per known class plus one unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyProblem {
    pub known_centers: Vec<[f64; 2]>,
    pub unknown_center: [f64; 2],
    pub std: f64,
    /// Total points, split evenly over the clusters.
    pub points: usize,
    pub seed: u64,
}

impl Default for ToyProblem {
    fn default() -> Self {
        Self {
            known_centers: vec![[-2.0, 0.0], [2.0, 0.0], [0.0, 3.0]],
            unknown_center: [0.0, -4.0],
            std: 0.5,
            points: 2000,
            seed: 0,
        }
    }
}

impl ToyProblem {
    pub fn num_classes(&self) -> usize {
        self.known_centers.len()
    }

    /// Points laid out as an `n x 1` map, clusters interleaved.
    pub fn sample(&self, seed: u64) -> Result<EmbeddingMap> {
        let normal = Normal::new(0.0, self.std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let clusters = self.num_classes() + 1;
        if self.num_classes() == 0 || self.points < clusters {
            return Err(Error::InvalidConfig("toy problem needs a known class and a point per cluster".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(self.points);
        let mut labels = Vec::with_capacity(self.points);
        for i in 0..self.points {
            let k = i % clusters;
            let (c, l) = match self.known_centers.get(k) {
                Some(c) => (c, PixelLabel::Known(k)),
                None => (&self.unknown_center, PixelLabel::Unknown),
            };
            pts.push(vec![c[0] + normal.sample(&mut rng), c[1] + normal.sample(&mut rng)]);
            labels.push(l);
        }
        EmbeddingMap::from_points(&pts, labels)
    }

    pub fn train_set(&self) -> Result<EmbeddingMap> {
        self.sample(self.seed)
    }

    /// A fresh draw from the same clusters.
    pub fn test_set(&self) -> Result<EmbeddingMap> {
        self.sample(self.seed ^ 0x9e37_79b9_7f4a_7c15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetScores {
    pub known_accuracy: f64,
    pub unknown_recall: f64,
    pub ca_iou: f64,
}

/// Accuracy over known pixels, recall of unknown pixels, and binary IoU of
/// the predicted unknown mask against the labelled one.
pub fn score_open_set(batch: &EmbeddingMap, p: &OpenSetParams) -> Result<OpenSetScores> {
    let c = p.num_classes();
    let pred = predict_labels(batch, p)?;
    let (mut known, mut correct, mut unknown, mut found) = (0usize, 0usize, 0usize, 0usize);
    for (l, &k) in batch.labels().iter().zip(&pred) {
        match *l {
            PixelLabel::Known(t) => {
                known += 1;
                correct += usize::from(t == k);
            }
            PixelLabel::Unknown => {
                unknown += 1;
                found += usize::from(k == c);
            }
            PixelLabel::Ignore => {}
        }
    }
    let (w, h) = batch.features().dims();
    let pm = BinaryMask::new(w, h, pred.iter().map(|&k| k == c).collect())?;
    let gm = BinaryMask::new(w, h, batch.labels().iter().map(|l| *l == PixelLabel::Unknown).collect())?;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(OpenSetScores {
        known_accuracy: ratio(correct, known),
        unknown_recall: ratio(found, unknown),
        ca_iou: compute_ca_iou(&pm, &gm)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clusters_are_balanced_and_reproducible() {
        let toy = ToyProblem { points: 40, ..Default::default() };
        let a = toy.train_set().unwrap();
        assert_eq!(a, toy.train_set().unwrap());
        assert_ne!(a, toy.test_set().unwrap());
        let unknown = a.labels().iter().filter(|l| **l == PixelLabel::Unknown).count();
        assert_eq!(unknown, 10);
        assert!(ToyProblem { points: 3, ..Default::default() }.train_set().is_err());
    }

    #[test]
    fn scores_against_hand_placed_head() {
        let toy = ToyProblem::default();
        let b = toy.test_set().unwrap();
        let centers = toy.known_centers.iter().map(|c| c.to_vec()).collect();
        // γ below every in-cluster score and above the far cluster's.
        let p = OpenSetParams::new(centers, vec![0.0; 3], -4.0).unwrap();
        let s = score_open_set(&b, &p).unwrap();
        assert!(s.known_accuracy > 0.99 && s.unknown_recall > 0.99 && s.ca_iou > 0.98, "{s:?}");
        let never = OpenSetParams { gamma: f64::NEG_INFINITY, ..p };
        let s = score_open_set(&b, &never).unwrap();
        assert_eq!((s.unknown_recall, s.ca_iou), (0.0, 0.0));
    }
}
