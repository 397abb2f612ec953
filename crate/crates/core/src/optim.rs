//! SGD with momentum, weight decay and a step learning-rate schedule.

use alloc::format;

use crate::math;
use crate::nn::{for_each_param, Module, ParamGroup};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    /// Initial learning rate of the backbone.
    pub lr: f64,
    /// Head learning rate as a multiple of `lr`.
    pub head_lr_mult: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// The rate is multiplied by `gamma` every `step_epochs` epochs.
    pub step_epochs: usize,
    pub gamma: f64,
    /// Largest global L2 norm of the gradient; zero disables clipping.
    pub clip_norm: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            head_lr_mult: 1.0,
            momentum: 0.9,
            weight_decay: 0.0005,
            step_epochs: 30,
            gamma: 0.5,
            clip_norm: 5.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lr) {
            return Err(Error::Config(format!("optim.lr must be positive, got {}", self.lr)));
        }
        if !positive(self.head_lr_mult) {
            return Err(Error::Config(format!(
                "optim.head_lr_mult must be positive, got {}",
                self.head_lr_mult
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "optim.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "optim.weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.step_epochs == 0 {
            return Err(Error::Config("optim.step_epochs must be positive".into()));
        }
        if !positive(self.gamma) {
            return Err(Error::Config(format!(
                "optim.gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::Config(format!(
                "optim.clip_norm must be non-negative, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }

    /// Backbone learning rate during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * math::powf(self.gamma, (epoch / self.step_epochs) as f64)
    }

    pub fn group_lr(&self, group: ParamGroup, epoch: usize) -> f64 {
        match group {
            ParamGroup::Backbone => self.lr_at(epoch),
            ParamGroup::Head => self.lr_at(epoch) * self.head_lr_mult,
        }
    }
}

/// Global L2 norm of the accumulated gradients of trainable parameters.
pub fn grad_norm(model: &mut dyn Module) -> f64 {
    let mut sq = 0.0;
    for_each_param(model, |_, p| {
        if p.trainable {
            sq += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
    });
    math::sqrt(sq)
}

/// One update of every trainable parameter from its accumulated gradient:
/// `v = momentum * v + (s * g + wd * w)`, `w -= lr * v`, where `s` shrinks
/// the gradient to at most `clip_norm` in global norm.
pub fn sgd_step(config: &SgdConfig, model: &mut dyn Module, epoch: usize) {
    let norm = grad_norm(model);
    let scale = if config.clip_norm > 0.0 && norm > config.clip_norm {
        config.clip_norm / norm
    } else {
        1.0
    };
    for_each_param(model, |_, p| {
        if !p.trainable {
            return;
        }
        let lr = config.group_lr(p.group, epoch);
        for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(p.velocity.iter_mut()) {
            *v = config.momentum * *v + scale * g + config.weight_decay * *w;
            *w -= lr * *v;
        }
    });
}
