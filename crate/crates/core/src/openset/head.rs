use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::contrastive::{contrastive_loss_and_grad, ContrastiveConfig, Projection};
use super::{EmbeddingMap, LossBreakdown, OpenSetParams, PixelLabel};
use crate::label::BinaryMask;
use crate::{Error, Result};

/// Pixels per partial sum. Fixed so reductions do not depend on thread count.
const CHUNK: usize = 256;

/// `C + 1` scores: `-‖m - μ_k‖² / (2σ_k²)` for each known class, then `γ`.
pub fn class_distances(m: &[f64], p: &OpenSetParams) -> Result<Vec<f64>> {
    p.check_dim(m.len())?;
    Ok(scores(m, p))
}

fn scores(m: &[f64], p: &OpenSetParams) -> Vec<f64> {
    let mut s: Vec<f64> = p
        .mu
        .iter()
        .zip(&p.log_sigma)
        .map(|(mu, ls)| {
            let sq: f64 = m.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            -0.5 * sq * (-2.0 * ls).exp()
        })
        .collect();
    s.push(p.gamma);
    s
}

fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in s.iter_mut() {
        *v /= total;
    }
}

/// Softmax over the `C + 1` scores.
pub fn predict_probs(m: &[f64], p: &OpenSetParams) -> Result<Vec<f64>> {
    let mut s = class_distances(m, p)?;
    softmax_in_place(&mut s);
    Ok(s)
}

/// Gradient of the segmentation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegGrad {
    pub mu: Vec<Vec<f64>>,
    pub log_sigma: Vec<f64>,
    pub gamma: f64,
}

impl SegGrad {
    fn zero(c: usize, e: usize) -> Self {
        Self {
            mu: vec![vec![0.0; e]; c],
            log_sigma: vec![0.0; c],
            gamma: 0.0,
        }
    }

    fn add(&mut self, o: &SegGrad) {
        for (a, b) in self.mu.iter_mut().flatten().zip(o.mu.iter().flatten()) {
            *a += b;
        }
        for (a, b) in self.log_sigma.iter_mut().zip(&o.log_sigma) {
            *a += b;
        }
        self.gamma += o.gamma;
    }

    fn scale(&mut self, f: f64) {
        self.mu.iter_mut().flatten().for_each(|v| *v *= f);
        self.log_sigma.iter_mut().for_each(|v| *v *= f);
        self.gamma *= f;
    }
}

fn check_batch(batch: &EmbeddingMap, p: &OpenSetParams) -> Result<usize> {
    p.check_dim(batch.dim())?;
    let c = p.num_classes();
    let mut n = 0;
    for l in batch.labels() {
        match l {
            PixelLabel::Known(k) if *k >= c => {
                return Err(Error::InvalidLabel(format!("class index {k} with {c} known classes")))
            }
            PixelLabel::Ignore => {}
            _ => n += 1,
        }
    }
    if n == 0 {
        return Err(Error::AllIgnored);
    }
    Ok(n)
}

/// Mean pixel cross-entropy over non-ignored pixels and its gradient.
///
/// With `g_k = ŷ_k - y_k`: `∂/∂μ_k = g_k (m - μ_k) / σ_k²`,
/// `∂/∂log σ_k = -2 g_k d_k`, `∂/∂γ = g_{C+1}`, each averaged over pixels.
pub fn seg_loss_and_grad(batch: &EmbeddingMap, p: &OpenSetParams) -> Result<(f64, SegGrad)> {
    let n = check_batch(batch, p)?;
    let (c, e) = (p.num_classes(), p.dim());
    let partials: Vec<(f64, SegGrad)> = (0..batch.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut loss = 0.0;
            let mut g = SegGrad::zero(c, e);
            for &i in idx {
                let Some(t) = batch.labels()[i].target(c) else {
                    continue;
                };
                let m = batch.embedding(i);
                let s = scores(m, p);
                let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - s[t];
                for k in 0..=c {
                    let gk = (s[k] - lse).exp() - f64::from(u8::from(k == t));
                    if k == c {
                        g.gamma += gk;
                        continue;
                    }
                    let inv_var = (-2.0 * p.log_sigma[k]).exp();
                    for (gm, (mi, mu)) in g.mu[k].iter_mut().zip(m.iter().zip(&p.mu[k])) {
                        *gm += gk * (mi - mu) * inv_var;
                    }
                    g.log_sigma[k] += -2.0 * gk * s[k];
                }
            }
            (loss, g)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = SegGrad::zero(c, e);
    for (l, g) in &partials {
        loss += l;
        grad.add(g);
    }
    let inv_n = 1.0 / n as f64;
    grad.scale(inv_n);
    Ok((loss * inv_n, grad))
}

pub fn seg_loss(batch: &EmbeddingMap, p: &OpenSetParams) -> Result<f64> {
    Ok(seg_loss_and_grad(batch, p)?.0)
}

/// Weighting and contrastive settings of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub contrastive: ContrastiveConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            contrastive: ContrastiveConfig::default(),
        }
    }
}

/// Gradient of `L = L_seg + λ L_cl` for every learnable quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRecord {
    pub mu: Vec<Vec<f64>>,
    pub log_sigma: Vec<f64>,
    pub gamma: f64,
    /// Row-major, same shape as the projection weights.
    pub projection: Vec<f64>,
}

/// Total loss and its analytic gradient. With `λ = 0` the contrastive term
/// is skipped entirely.
pub fn gradients(
    batch: &EmbeddingMap,
    p: &OpenSetParams,
    proj: &Projection,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, GradientRecord)> {
    let (l_seg, seg) = seg_loss_and_grad(batch, p)?;
    let (l_cl, mut proj_grad) = if cfg.lambda != 0.0 {
        contrastive_loss_and_grad(batch, proj, &cfg.contrastive)?
    } else {
        (0.0, vec![0.0; proj.weights().len()])
    };
    proj_grad.iter_mut().for_each(|g| *g *= cfg.lambda);
    Ok((
        LossBreakdown::new(l_seg, l_cl, cfg.lambda),
        GradientRecord {
            mu: seg.mu,
            log_sigma: seg.log_sigma,
            gamma: seg.gamma,
            projection: proj_grad,
        },
    ))
}

/// Argmax over the `C + 1` scores per pixel; index `C` is unknown. Ties go
/// to the lower index.
pub fn predict_labels(batch: &EmbeddingMap, p: &OpenSetParams) -> Result<Vec<usize>> {
    p.check_dim(batch.dim())?;
    Ok((0..batch.len())
        .map(|i| {
            let s = scores(batch.embedding(i), p);
            let mut best = 0;
            for k in 1..s.len() {
                if s[k] > s[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Pixels whose most probable class is the unknown class.
pub fn predict_unknown_mask(batch: &EmbeddingMap, p: &OpenSetParams) -> Result<BinaryMask> {
    let c = p.num_classes();
    let labels = predict_labels(batch, p)?;
    let (w, h) = batch.features().dims();
    BinaryMask::new(w, h, labels.into_iter().map(|k| k == c).collect())
}
