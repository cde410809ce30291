use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbeddingMap, PixelLabel};
use crate::prototypes::{decode_tensor, encode_tensor, Tensor};
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-12;

/// Linear map `z = W m` from embedding space into the contrastive space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    out_dim: usize,
    in_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
}

impl Projection {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::InvalidConfig("projection dimensions must be positive".into()));
        }
        if weights.len() != out_dim * in_dim {
            return Err(Error::LengthMismatch {
                expected: out_dim * in_dim,
                actual: weights.len(),
            });
        }
        Ok(Self { out_dim, in_dim, weights })
    }

    /// Entries drawn from `N(0, 1/in_dim)`.
    pub fn random(out_dim: usize, in_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (in_dim.max(1) as f64).sqrt())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let weights = (0..out_dim * in_dim).map(|_| normal.sample(&mut rng)).collect();
        Self::new(out_dim, in_dim, weights)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let weights = (0..dim * dim).map(|i| (i / dim == i % dim) as u8 as f64).collect();
        Self::new(dim, dim, weights)
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn apply(&self, m: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .map(|row| row.iter().zip(m).map(|(w, x)| w * x).sum())
            .collect()
    }

    pub fn to_tensor(&self) -> Vec<u8> {
        encode_tensor(&Tensor {
            height: self.out_dim,
            width: self.in_dim,
            channels: 1,
            data: self.weights.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn from_tensor(bytes: &[u8]) -> Result<Self> {
        let t = decode_tensor(bytes)?;
        if t.channels != 1 {
            return Err(Error::MalformedTensor("projection must have one channel".into()));
        }
        Self::new(t.height, t.width, t.data.iter().map(|&v| v as f64).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Pixels drawn per label (unknown counts as a label).
    pub max_per_class: usize,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            max_per_class: 64,
            seed: 0,
        }
    }
}

/// Up to `max_per_class` non-ignored pixel indices per label, drawn without
/// replacement. Output is grouped by label (known classes first, then
/// unknown) and sorted within each group.
pub fn sample_pixels(batch: &EmbeddingMap, max_per_class: usize, seed: u64) -> Vec<usize> {
    let mut groups: BTreeMap<(bool, usize), Vec<usize>> = BTreeMap::new();
    for (i, l) in batch.labels().iter().enumerate() {
        match *l {
            PixelLabel::Known(k) => groups.entry((false, k)).or_default().push(i),
            PixelLabel::Unknown => groups.entry((true, 0)).or_default().push(i),
            PixelLabel::Ignore => {}
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for idx in groups.into_values() {
        if idx.len() <= max_per_class {
            out.extend(idx);
        } else {
            let mut pick: Vec<usize> = index::sample(&mut rng, idx.len(), max_per_class)
                .into_iter()
                .map(|j| idx[j])
                .collect();
            pick.sort_unstable();
            out.extend(pick);
        }
    }
    out
}

/// Supervised contrastive loss on sampled, projected and L2-normalized
/// embeddings, with its gradient with respect to the projection weights.
///
/// For anchor `a` with positives `P(a)` and negatives `N(a)`:
/// `L_a = mean_p [-s_ap + log(exp(s_ap) + Σ_n exp(s_an))]` where
/// `s = ẑ_a · ẑ_b / τ`. The total is the mean of `L_a` over anchors that
/// have at least one positive.
pub fn contrastive_loss_and_grad(
    batch: &EmbeddingMap,
    proj: &Projection,
    cfg: &ContrastiveConfig,
) -> Result<(f64, Vec<f64>)> {
    if proj.in_dim != batch.dim() {
        return Err(Error::LengthMismatch {
            expected: proj.in_dim,
            actual: batch.dim(),
        });
    }
    if !(cfg.temperature > 0.0) || cfg.max_per_class == 0 {
        return Err(Error::InvalidConfig("temperature and max_per_class must be positive".into()));
    }
    let sample = sample_pixels(batch, cfg.max_per_class, cfg.seed);
    let label: Vec<PixelLabel> = sample.iter().map(|&i| batch.labels()[i]).collect();
    let classes = {
        let mut t = label.clone();
        t.dedup();
        t.len()
    };
    if classes < 2 {
        return Err(Error::TooFewClasses(classes));
    }
    let n = sample.len();
    let d = proj.out_dim;
    let code: Vec<usize> = label.iter().map(|l| l.target(usize::MAX)).map(Option::unwrap_or_default).collect();
    let inv_t = 1.0 / cfg.temperature;
    // Normalized projections, row-major n x d.
    let mut zh = vec![0.0; n * d];
    let mut norms = vec![0.0; n];
    for (k, &i) in sample.iter().enumerate() {
        let z = proj.apply(batch.embedding(i));
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
        norms[k] = norm;
        zh[k * d..(k + 1) * d].iter_mut().zip(&z).for_each(|(o, x)| *o = x / norm);
    }
    let zrow = |k: usize| &zh[k * d..(k + 1) * d];
    // Column-major d x n, so column k is ẑ_k; the Gram matrix is symmetric.
    let zm = DMatrix::from_column_slice(d, n, &zh);
    let gram = zm.tr_mul(&zm);

    // Row a of `coef` holds dL_a/ds_aj; rows of anchors without positives stay zero.
    let mut coef = DMatrix::<f64>::zeros(n, n);
    let row_losses: Vec<Option<f64>> = coef
        .as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .map(|(a, coef)| {
            let s = gram.column(a);
            let la = code[a];
            let mut n_pos = 0usize;
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if j != a {
                    n_pos += usize::from(code[j] == la);
                    max = max.max(s[j]);
                }
            }
            if n_pos == 0 {
                return None;
            }
            let max = max * inv_t;
            // Exponentiated scores go into `coef` first and are rescaled in place.
            let mut neg_sum = 0.0;
            for j in 0..n {
                let e = (s[j] * inv_t - max).exp();
                coef[j] = e;
                if code[j] != la {
                    neg_sum += e;
                }
            }
            let w = 1.0 / n_pos as f64;
            let mut loss = 0.0;
            // Each negative appears in every positive's partition function.
            let mut inv_z = 0.0;
            for j in 0..n {
                if j != a && code[j] == la {
                    let zp = coef[j] + neg_sum;
                    loss += -s[j] * inv_t + max + zp.ln();
                    coef[j] = w * (coef[j] / zp - 1.0);
                    inv_z += 1.0 / zp;
                }
            }
            coef[a] = 0.0;
            for j in 0..n {
                if code[j] != la {
                    coef[j] *= w * inv_z;
                }
            }
            Some(loss * w)
        })
        .collect();
    let anchors = row_losses.iter().flatten().count();
    if anchors == 0 {
        return Err(Error::NoPositivePairs);
    }
    let scale = 1.0 / anchors as f64;
    let loss = row_losses.iter().flatten().sum::<f64>() * scale;

    // Storage is column-major, so the chunk for anchor a is column a and
    // `coef` holds the transpose of dL/ds. dL/dẑ = (C + Cᵀ) ẑ / τ either way.
    let sym = &coef + coef.transpose();
    let g = &zm * sym * (inv_t * scale);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let e = proj.in_dim;
    let mut grad = vec![0.0; d * e];
    for (k, &i) in sample.iter().enumerate() {
        let gk = g.column(k);
        let gk = gk.as_slice();
        // Back through the normalization: (G - ẑ(ẑ·G)) / ‖z‖.
        let along = dot(zrow(k), gk);
        let m = batch.embedding(i);
        for r in 0..d {
            let gz = (gk[r] - zh[k * d + r] * along) / norms[k];
            for (w, x) in grad[r * e..(r + 1) * e].iter_mut().zip(m) {
                *w += gz * x;
            }
        }
    }
    Ok((loss, grad))
}

pub fn contrastive_loss(batch: &EmbeddingMap, proj: &Projection, cfg: &ContrastiveConfig) -> Result<f64> {
    Ok(contrastive_loss_and_grad(batch, proj, cfg)?.0)
}
