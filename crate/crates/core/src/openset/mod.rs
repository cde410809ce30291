//! Prototype-distance open-set segmentation head.
//!
//! Each known class `k` has a learnable prototype `μ_k` and scale `σ_k`; a
//! pixel embedding `m` scores `-‖m - μ_k‖² / (2σ_k²)` against it, and a single
//! global constant `γ` acts as the score of the extra "unknown" class. A
//! softmax over the `C + 1` scores gives class probabilities, trained with
//! pixel cross-entropy plus an optional supervised contrastive term on a
//! learned linear projection. Gradients are derived by hand and optimized
//! with momentum SGD and a step learning-rate schedule.

mod contrastive;
mod head;
mod toy;
mod train;

use serde::{Deserialize, Serialize};

use crate::label::LabelMap;
use crate::prototypes::{decode_tensor, encode_tensor, FeatureMap, Tensor};
use crate::{Error, Result};

pub use contrastive::{contrastive_loss, contrastive_loss_and_grad, sample_pixels, ContrastiveConfig, Projection};
pub use head::{
    class_distances, gradients, predict_labels, predict_probs, predict_unknown_mask, seg_loss,
    seg_loss_and_grad, GradientRecord, LossConfig, SegGrad,
};
pub use toy::{score_open_set, OpenSetScores, ToyProblem};
pub use train::{train, train_from, Schedule, StepRecord, TrainConfig, TrainOutcome};

/// Supervision for one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelLabel {
    /// Known class index in `0..C`.
    Known(usize),
    Unknown,
    /// Excluded from every loss and gradient.
    Ignore,
}

impl PixelLabel {
    /// Label-map encoding: 0 ignore, `1..=C` known, `C + 1` unknown.
    pub fn from_id(id: u32, num_classes: usize) -> Result<Self> {
        match id as usize {
            0 => Ok(PixelLabel::Ignore),
            k if k <= num_classes => Ok(PixelLabel::Known(k - 1)),
            k if k == num_classes + 1 => Ok(PixelLabel::Unknown),
            k => Err(Error::InvalidLabel(format!("label {k} with {num_classes} known classes"))),
        }
    }

    pub fn to_id(self, num_classes: usize) -> u32 {
        match self {
            PixelLabel::Ignore => 0,
            PixelLabel::Known(k) => k as u32 + 1,
            PixelLabel::Unknown => num_classes as u32 + 1,
        }
    }

    /// Index among the `C + 1` outputs, `None` when ignored.
    pub fn target(self, num_classes: usize) -> Option<usize> {
        match self {
            PixelLabel::Known(k) => Some(k),
            PixelLabel::Unknown => Some(num_classes),
            PixelLabel::Ignore => None,
        }
    }
}

/// Per-pixel embeddings with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    features: FeatureMap,
    labels: Vec<PixelLabel>,
}

impl EmbeddingMap {
    pub fn new(features: FeatureMap, labels: Vec<PixelLabel>) -> Result<Self> {
        let (w, h) = features.dims();
        if labels.len() != w * h {
            return Err(Error::BufferSize {
                width: w,
                height: h,
                len: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    /// A `n x 1` map from a list of points.
    pub fn from_points(points: &[Vec<f64>], labels: Vec<PixelLabel>) -> Result<Self> {
        let dim = points.first().map_or(1, Vec::len);
        let features = FeatureMap::new(points.len(), 1, dim, points.concat())?;
        Self::new(features, labels)
    }

    pub fn from_label_map(features: FeatureMap, labels: &LabelMap, num_classes: usize) -> Result<Self> {
        if features.dims() != labels.dims() {
            return Err(Error::DimensionMismatch {
                expected: features.dims(),
                actual: labels.dims(),
            });
        }
        let labels = labels
            .ids()
            .iter()
            .map(|&id| PixelLabel::from_id(id, num_classes))
            .collect::<Result<_>>()?;
        Self::new(features, labels)
    }

    pub fn label_map(&self, num_classes: usize) -> LabelMap {
        let (w, h) = self.features.dims();
        LabelMap::new(w, h, self.labels.iter().map(|l| l.to_id(num_classes)).collect()).unwrap()
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn labels(&self) -> &[PixelLabel] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.features.channels()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        self.features.pixel(i)
    }

    pub fn with_embedding(&self, i: usize, e: &[f64]) -> Result<Self> {
        let mut values = self.features.values().to_vec();
        let c = self.dim();
        values[i * c..(i + 1) * c].copy_from_slice(e);
        let (w, h) = self.features.dims();
        Self::new(FeatureMap::new(w, h, c, values)?, self.labels.clone())
    }
}

/// Learnable head parameters: `C` prototypes of dimension `E`, `C` log-scales
/// (`σ_k = exp(log_sigma_k)`), and the global unknown score `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetParams {
    pub mu: Vec<Vec<f64>>,
    pub log_sigma: Vec<f64>,
    pub gamma: f64,
}

impl OpenSetParams {
    pub fn new(mu: Vec<Vec<f64>>, log_sigma: Vec<f64>, gamma: f64) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::TooFewItems { required: 1, actual: 0 });
        }
        if log_sigma.len() != mu.len() {
            return Err(Error::LengthMismatch {
                expected: mu.len(),
                actual: log_sigma.len(),
            });
        }
        let e = mu[0].len();
        if let Some(m) = mu.iter().find(|m| m.len() != e) {
            return Err(Error::LengthMismatch { expected: e, actual: m.len() });
        }
        Ok(Self { mu, log_sigma, gamma })
    }

    pub fn num_classes(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        self.mu[0].len()
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.log_sigma[k].exp()
    }

    pub fn is_finite(&self) -> bool {
        self.gamma.is_finite()
            && self.log_sigma.iter().all(|v| v.is_finite())
            && self.mu.iter().flatten().all(|v| v.is_finite())
    }

    /// `μ_k` from masked average pooling of the batch embeddings, `log σ = 0`, `γ = 0`.
    pub fn init_from_embeddings(batches: &[EmbeddingMap], num_classes: usize) -> Result<Self> {
        use crate::prototypes::{masked_average_pool, ClassMask, PoolOptions};
        let pairs: Vec<_> = batches
            .iter()
            .map(|b| (b.features.clone(), ClassMask::new(b.label_map(num_classes))))
            .collect();
        let mu = (0..num_classes)
            .map(|k| {
                // First batch when it has the class, otherwise all batches.
                masked_average_pool(&pairs[..1.min(pairs.len())], k as u32 + 1, PoolOptions::default())
                    .or_else(|_| masked_average_pool(&pairs, k as u32 + 1, PoolOptions::default()))
                    .map(|p| p.vector)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mu, vec![0.0; num_classes], 0.0)
    }

    fn check_dim(&self, e: usize) -> Result<()> {
        if e != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: e,
            });
        }
        Ok(())
    }
}

/// Checkpoint as a `(C + 1) x (E + 1)` single-channel tensor: row `k < C` is
/// `[μ_k, log σ_k]`, the last row is `[γ, 0, ...]`.
pub fn encode_checkpoint(p: &OpenSetParams) -> Vec<u8> {
    let (c, e) = (p.num_classes(), p.dim());
    let mut data = Vec::with_capacity((c + 1) * (e + 1));
    for k in 0..c {
        data.extend(p.mu[k].iter().map(|&v| v as f32));
        data.push(p.log_sigma[k] as f32);
    }
    data.push(p.gamma as f32);
    data.extend(std::iter::repeat_n(0.0f32, e));
    encode_tensor(&Tensor {
        height: c + 1,
        width: e + 1,
        channels: 1,
        data,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<OpenSetParams> {
    let t = decode_tensor(bytes)?;
    if t.channels != 1 || t.height < 2 || t.width < 2 {
        return Err(Error::MalformedTensor(format!(
            "checkpoint shape {}x{}x{} is not (C+1)x(E+1)x1",
            t.height, t.width, t.channels
        )));
    }
    let (c, e) = (t.height - 1, t.width - 1);
    let row = |k: usize| &t.data[k * (e + 1)..(k + 1) * (e + 1)];
    let mu = (0..c).map(|k| row(k)[..e].iter().map(|&v| v as f64).collect()).collect();
    let log_sigma = (0..c).map(|k| row(k)[e] as f64).collect();
    OpenSetParams::new(mu, log_sigma, row(c)[0] as f64)
}

/// `total == l_seg + lambda * l_cl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_seg: f64,
    pub l_cl: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_seg: f64, l_cl: f64, lambda: f64) -> Self {
        Self {
            l_seg,
            l_cl,
            lambda,
            total: l_seg + lambda * l_cl,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_id_encoding() {
        assert_eq!(PixelLabel::from_id(0, 3).unwrap(), PixelLabel::Ignore);
        assert_eq!(PixelLabel::from_id(3, 3).unwrap(), PixelLabel::Known(2));
        assert_eq!(PixelLabel::from_id(4, 3).unwrap(), PixelLabel::Unknown);
        assert!(PixelLabel::from_id(5, 3).is_err());
        for l in [PixelLabel::Ignore, PixelLabel::Known(1), PixelLabel::Unknown] {
            assert_eq!(PixelLabel::from_id(l.to_id(3), 3).unwrap(), l);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = OpenSetParams::new(vec![vec![0.5, -1.25], vec![2.0, 3.0]], vec![0.25, -0.5], -1.5).unwrap();
        assert_eq!(decode_checkpoint(&encode_checkpoint(&p)).unwrap(), p);
        assert!(decode_checkpoint(&encode_tensor(&Tensor { height: 1, width: 3, channels: 1, data: vec![0.0; 3] })).is_err());
    }

    #[test]
    fn init_pools_first_batch() {
        let b = EmbeddingMap::from_points(
            &[vec![1.0, 0.0], vec![3.0, 4.0], vec![9.0, 9.0], vec![-1.0, -1.0]],
            vec![PixelLabel::Known(0), PixelLabel::Known(0), PixelLabel::Unknown, PixelLabel::Known(1)],
        )
        .unwrap();
        let p = OpenSetParams::init_from_embeddings(&[b], 2).unwrap();
        assert_eq!(p.mu, vec![vec![2.0, 2.0], vec![-1.0, -1.0]]);
        assert_eq!((p.log_sigma.clone(), p.gamma), (vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn init_fails_for_missing_class() {
        let b = EmbeddingMap::from_points(&[vec![1.0]], vec![PixelLabel::Known(0)]).unwrap();
        assert!(matches!(OpenSetParams::init_from_embeddings(&[b], 2), Err(Error::ClassAbsent(2))));
    }
}
