use serde::{Deserialize, Serialize};

use super::contrastive::{ContrastiveConfig, Projection};
use super::head::{gradients, LossConfig};
use super::{EmbeddingMap, LossBreakdown, OpenSetParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub max_per_class: usize,
    pub projection_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 100,
            milestones: vec![60, 80],
            lr_decay: 0.1,
            lambda: 0.1,
            temperature: 0.1,
            max_per_class: 64,
            projection_dim: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) || !(self.lr_decay > 0.0) || !(self.lambda >= 0.0) {
            return bad("weight_decay, lr_decay and lambda must be non-negative");
        }
        if !(self.temperature > 0.0) || self.max_per_class == 0 || self.projection_dim == 0 {
            return bad("temperature, max_per_class and projection_dim must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.lr,
            milestones: self.milestones.clone(),
            decay: self.lr_decay,
        }
    }

    fn loss_config(&self, step: usize) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            contrastive: ContrastiveConfig {
                temperature: self.temperature,
                max_per_class: self.max_per_class,
                seed: self.seed.wrapping_add(step as u64),
            },
        }
    }
}

/// Step decay: `base_lr * decay^(milestones passed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl Schedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.decay.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: OpenSetParams,
    pub projection: Projection,
    pub history: Vec<StepRecord>,
}

/// Prototypes initialized from the data, a seeded random projection, then
/// [`train_from`].
pub fn train(batches: &[EmbeddingMap], num_classes: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if batches.is_empty() {
        return Err(Error::TooFewItems { required: 1, actual: 0 });
    }
    let params = OpenSetParams::init_from_embeddings(batches, num_classes)?;
    let projection = Projection::random(cfg.projection_dim, params.dim(), cfg.seed)?;
    train_from(params, projection, batches, cfg)
}

/// SGD with momentum (`buf = m·buf + g + wd·p`, `p -= lr·buf`), one step per
/// batch, batches visited in order every epoch.
pub fn train_from(
    mut params: OpenSetParams,
    mut projection: Projection,
    batches: &[EmbeddingMap],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let n_params = params.num_classes() * (params.dim() + 1) + 1 + projection.weights().len();
    let mut buf = vec![0.0; n_params];
    let mut history = Vec::with_capacity(cfg.epochs * batches.len());
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        for batch in batches {
            let (loss, g) = gradients(batch, &params, &projection, &cfg.loss_config(step))?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss {}", loss.total),
                });
            }
            history.push(StepRecord {
                step,
                epoch,
                lr,
                loss,
                gamma: params.gamma,
            });
            let values = params
                .mu
                .iter_mut()
                .flatten()
                .chain(params.log_sigma.iter_mut())
                .chain(std::iter::once(&mut params.gamma))
                .chain(projection.weights_mut().iter_mut());
            let grads = g
                .mu
                .iter()
                .flatten()
                .chain(&g.log_sigma)
                .chain(std::iter::once(&g.gamma))
                .chain(&g.projection);
            for ((p, &d), b) in values.zip(grads).zip(buf.iter_mut()) {
                *b = cfg.momentum * *b + d + cfg.weight_decay * *p;
                *p -= lr * *b;
            }
            if !params.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "non-finite parameters".into(),
                });
            }
            step += 1;
        }
    }
    Ok(TrainOutcome {
        params,
        projection,
        history,
    })
}
