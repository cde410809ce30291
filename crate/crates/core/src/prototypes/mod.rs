//! Class prototypes by masked average pooling over ingested feature maps,
//! pairwise prototype distances, agglomerative clustering, and dendrogram
//! serialization.

mod cluster;
mod dendrogram;
mod tensor;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::label::{LabelMap, VOID_ID};
use crate::{Error, Result};

pub use cluster::{agglomerative_cluster, Dendrogram, Linkage, Merge};
pub use dendrogram::{deserialize_dendrogram, serialize_dendrogram, DendrogramNode};
pub use tensor::{decode_tensor, encode_tensor, Tensor};

/// Per-pixel feature vectors, row-major, channels contiguous per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::MalformedTensor("feature map needs at least one channel".into()));
        }
        if values.len() != width * height * channels {
            return Err(Error::BufferSize {
                width,
                height,
                len: values.len() / channels,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedTensor("non-finite feature value".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                if v.len() != channels {
                    return Err(Error::LengthMismatch {
                        expected: channels,
                        actual: v.len(),
                    });
                }
                values.extend(v);
            }
        }
        Self::new(width, height, channels, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Feature vector of pixel index `i` (row-major).
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Adds `w` to every pixel's feature vector.
    pub fn translated(&self, w: &[f64]) -> Result<Self> {
        if w.len() != self.channels {
            return Err(Error::LengthMismatch {
                expected: self.channels,
                actual: w.len(),
            });
        }
        let values = self
            .values
            .chunks_exact(self.channels)
            .flat_map(|px| px.iter().zip(w).map(|(a, b)| a + b))
            .collect();
        Self::new(self.width, self.height, self.channels, values)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.channels,
            self.values.iter().map(|v| v * s).collect(),
        )
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let Tensor {
            height,
            width,
            channels,
            data,
        } = t;
        Self::new(width, height, channels, data.into_iter().map(f64::from).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.values.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Fine-grained per-pixel class labels paired with a [`FeatureMap`].
/// Label 0 is unlabeled and never pooled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask(LabelMap);

impl ClassMask {
    pub fn new(labels: LabelMap) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &LabelMap {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Nearest-neighbour resampling, e.g. to a backbone's output stride.
    pub fn resized_to(&self, width: usize, height: usize) -> Self {
        let (sw, sh) = self.0.dims();
        Self(LabelMap::from_fn(width, height, |x, y| {
            let sx = ((x as f64 + 0.5) * sw as f64 / width as f64) as usize;
            let sy = ((y as f64 + 0.5) * sh as f64 / height as f64) as usize;
            self.0.get(sx.min(sw - 1), sy.min(sh - 1))
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class_id: u32,
    pub vector: Vec<f64>,
    /// Number of pooled pixels, at least 1.
    pub support: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolOptions {
    /// L2-normalize each pixel's feature vector before pooling.
    pub l2_normalize: bool,
}

/// Running `(sum, count)` for one class; merging is associative and commutative.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSum {
    pub sum: Vec<f64>,
    pub support: u64,
}

impl PrototypeSum {
    pub fn zero(channels: usize) -> Self {
        Self {
            sum: vec![0.0; channels],
            support: 0,
        }
    }

    pub fn accumulate(&mut self, features: &FeatureMap, mask: &ClassMask, class: u32, opts: PoolOptions) -> Result<()> {
        if features.dims() != mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: features.dims(),
                actual: mask.dims(),
            });
        }
        if features.channels() != self.sum.len() {
            return Err(Error::LengthMismatch {
                expected: self.sum.len(),
                actual: features.channels(),
            });
        }
        for (i, &label) in mask.labels().ids().iter().enumerate() {
            if label != class {
                continue;
            }
            let px = features.pixel(i);
            let scale = if opts.l2_normalize {
                let n = px.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 { 1.0 / n } else { 0.0 }
            } else {
                1.0
            };
            for (s, v) in self.sum.iter_mut().zip(px) {
                *s += v * scale;
            }
            self.support += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &PrototypeSum) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        self.support += other.support;
    }

    pub fn finish(&self, class_id: u32) -> Result<Prototype> {
        if self.support == 0 {
            return Err(Error::ClassAbsent(class_id));
        }
        let n = self.support as f64;
        Ok(Prototype {
            class_id,
            vector: self.sum.iter().map(|s| s / n).collect(),
            support: self.support,
        })
    }
}

fn batch_channels(batch: &[(FeatureMap, ClassMask)]) -> Result<usize> {
    let c = batch.first().map(|(f, _)| f.channels()).ok_or(Error::TooFewItems {
        required: 1,
        actual: 0,
    })?;
    if let Some((f, _)) = batch.iter().find(|(f, _)| f.channels() != c) {
        return Err(Error::LengthMismatch {
            expected: c,
            actual: f.channels(),
        });
    }
    Ok(c)
}

/// Mean feature vector over every pixel labeled `class` across the batch.
pub fn masked_average_pool(batch: &[(FeatureMap, ClassMask)], class: u32, opts: PoolOptions) -> Result<Prototype> {
    let channels = batch_channels(batch).map_err(|e| match e {
        Error::TooFewItems { .. } => Error::ClassAbsent(class),
        e => e,
    })?;
    let partials = batch
        .par_iter()
        .map(|(f, m)| {
            let mut acc = PrototypeSum::zero(channels);
            acc.accumulate(f, m, class, opts)?;
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = PrototypeSum::zero(channels);
    for p in &partials {
        total.merge(p);
    }
    total.finish(class)
}

/// Prototypes for every nonzero label present in the batch, sorted by class id.
pub fn extract_prototypes(batch: &[(FeatureMap, ClassMask)], opts: PoolOptions) -> Result<Vec<Prototype>> {
    let mut classes: Vec<u32> = batch
        .iter()
        .flat_map(|(_, m)| m.labels().ids().iter().copied())
        .filter(|&c| c != VOID_ID)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| masked_average_pool(batch, c, opts))
        .collect()
}

/// Dense symmetric distance matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidDistanceMatrix(format!(
                "{} entries for {n} items",
                data.len()
            )));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::InvalidDistanceMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = data[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidDistanceMatrix(format!("entry ({i},{j}) = {v}")));
                }
                if v != data[j * n + i] {
                    return Err(Error::InvalidDistanceMatrix(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Euclidean distances between prototypes.
pub fn pairwise_distances(ps: &[Prototype]) -> Result<DistanceMatrix> {
    let n = ps.len();
    if let Some(p) = ps.iter().find(|p| p.vector.len() != ps[0].vector.len()) {
        return Err(Error::LengthMismatch {
            expected: ps[0].vector.len(),
            actual: p.vector.len(),
        });
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = ps[i]
                .vector
                .iter()
                .zip(&ps[j].vector)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix::new(n, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn proto(id: u32, v: &[f64]) -> Prototype {
        Prototype { class_id: id, vector: v.to_vec(), support: 1 }
    }

    fn random_pair(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, k: u32) -> (FeatureMap, ClassMask) {
        let f = FeatureMap::from_fn(w, h, c, |_, _| (0..c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let m = ClassMask::new(LabelMap::from_fn(w, h, |_, _| rng.random_range(0..=k)));
        (f, m)
    }

    #[test]
    fn constant_field_prototype() {
        let f = FeatureMap::from_fn(4, 4, 2, |_, _| vec![3.0, 3.0]).unwrap();
        let m = ClassMask::new(LabelMap::from_fn(4, 4, |x, _| (x < 2) as u32 * 5));
        let p = masked_average_pool(&[(f, m)], 5, PoolOptions::default()).unwrap();
        assert_eq!(p.vector, vec![3.0, 3.0]);
        assert_eq!(p.support, 8);
    }

    #[test]
    fn two_pixel_mean() {
        let f = FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 3.0, 4.0]).unwrap();
        let m = ClassMask::new(LabelMap::new(2, 1, vec![1, 1]).unwrap());
        let p = masked_average_pool(&[(f, m)], 1, PoolOptions::default()).unwrap();
        assert_eq!(p.vector, vec![2.0, 2.0]);
    }

    #[test]
    fn absent_class_is_error() {
        let f = FeatureMap::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let m = ClassMask::new(LabelMap::new(2, 1, vec![1, 1]).unwrap());
        assert!(matches!(
            masked_average_pool(&[(f, m)], 9, PoolOptions::default()),
            Err(Error::ClassAbsent(9))
        ));
        assert!(matches!(masked_average_pool(&[], 9, PoolOptions::default()), Err(Error::ClassAbsent(9))));
    }

    #[test]
    fn mismatched_mask_dims() {
        let f = FeatureMap::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let m = ClassMask::new(LabelMap::new(1, 2, vec![1, 1]).unwrap());
        assert!(masked_average_pool(&[(f.clone(), m.clone())], 1, PoolOptions::default()).is_err());
        let resized = m.resized_to(2, 1);
        assert!(masked_average_pool(&[(f, resized)], 1, PoolOptions::default()).is_ok());
    }

    #[test]
    fn l2_normalization() {
        let f = FeatureMap::new(2, 1, 2, vec![3.0, 4.0, 0.0, 2.0]).unwrap();
        let m = ClassMask::new(LabelMap::new(2, 1, vec![1, 1]).unwrap());
        let p = masked_average_pool(&[(f, m)], 1, PoolOptions { l2_normalize: true }).unwrap();
        assert!((p.vector[0] - 0.3).abs() < 1e-15 && (p.vector[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn union_of_batches_is_support_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<_> = (0..3).map(|_| random_pair(&mut rng, 9, 7, 4, 3)).collect();
            let b: Vec<_> = (0..2).map(|_| random_pair(&mut rng, 9, 7, 4, 3)).collect();
            let all: Vec<_> = a.iter().chain(&b).cloned().collect();
            for c in 1..=3 {
                let (pa, pb) = (
                    masked_average_pool(&a, c, PoolOptions::default()).unwrap(),
                    masked_average_pool(&b, c, PoolOptions::default()).unwrap(),
                );
                let pu = masked_average_pool(&all, c, PoolOptions::default()).unwrap();
                let (na, nb) = (pa.support as f64, pb.support as f64);
                for k in 0..4 {
                    let w = (na * pa.vector[k] + nb * pb.vector[k]) / (na + nb);
                    assert!((pu.vector[k] - w).abs() < 1e-10);
                }
                assert_eq!(pu.support, pa.support + pb.support);
            }
        }
    }

    #[test]
    fn translation_shifts_prototypes_and_keeps_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch: Vec<_> = (0..3).map(|_| random_pair(&mut rng, 8, 8, 3, 4)).collect();
        let w = [0.5, -7.0, 2.25];
        let shifted: Vec<_> = batch
            .iter()
            .map(|(f, m)| (f.translated(&w).unwrap(), m.clone()))
            .collect();
        let p0 = extract_prototypes(&batch, PoolOptions::default()).unwrap();
        let p1 = extract_prototypes(&shifted, PoolOptions::default()).unwrap();
        for (a, b) in p0.iter().zip(&p1) {
            for k in 0..3 {
                assert!((b.vector[k] - a.vector[k] - w[k]).abs() < 1e-10);
            }
        }
        let (d0, d1) = (pairwise_distances(&p0).unwrap(), pairwise_distances(&p1).unwrap());
        for i in 0..d0.len() {
            for j in 0..d0.len() {
                assert!((d0.get(i, j) - d1.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn distances() {
        let d = pairwise_distances(&[proto(0, &[0.0, 0.0]), proto(1, &[3.0, 4.0]), proto(2, &[0.0, 0.0])]).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(0, 2), 0.0);
        assert!(pairwise_distances(&[proto(0, &[0.0]), proto(1, &[0.0, 1.0])]).is_err());
    }

    #[test]
    fn distances_match_per_component_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ps: Vec<_> = (0..6)
            .map(|i| proto(i, &(0..5).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>()))
            .collect();
        let d = pairwise_distances(&ps).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..5 {
                    let diff = ps[i].vector[k] - ps[j].vector[k];
                    s += diff * diff;
                }
                assert!((d.get(i, j) - s.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distance_matrix_validation() {
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 1.0]).is_err());
    }
}
