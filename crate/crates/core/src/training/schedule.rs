use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::encoder::FreezePolicy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub cosine_cycles: usize,
    pub max_lr: f64,
    /// Bags per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub freeze_policy: FreezePolicy,
    pub preset: String,
}

impl TrainConfig {
    fn preset(
        name: &str,
        epochs: usize,
        warmup_epochs: usize,
        cosine_cycles: usize,
        max_lr: f64,
        batch_size: usize,
    ) -> Self {
        Self {
            epochs,
            warmup_epochs,
            cosine_cycles,
            max_lr,
            batch_size,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            freeze_policy: FreezePolicy::FrozenExceptLayernorm,
            preset: name.to_owned(),
        }
    }

    /// Lymph-node metastasis schedule: 5 warmup epochs, one cosine cycle.
    pub fn lnm() -> Self {
        Self::preset("lnm", 200, 5, 1, 1e-4, 16)
    }

    /// Subtyping schedule: 10 warmup epochs, two cosine cycles.
    pub fn subtype() -> Self {
        Self::preset("subtype", 200, 10, 2, 5e-5, 32)
    }

    /// Desk-scale schedule for the synthetic tasks, everything trainable.
    pub fn toy() -> Self {
        Self {
            freeze_policy: FreezePolicy::None,
            ..Self::preset("toy", 50, 2, 1, 1e-3, 4)
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "lnm" => Ok(Self::lnm()),
            "subtype" => Ok(Self::subtype()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected toy, lnm or subtype)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad(format!(
                "need 0 <= warmup_epochs < epochs, got {} and {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.cosine_cycles == 0 {
            return bad("cosine_cycles must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return bad(format!("max_lr must be positive, got {}", self.max_lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad(format!(
                "invalid Adam constants beta1={} beta2={} eps={}",
                self.beta1, self.beta2, self.eps
            ));
        }
        Ok(())
    }
}

/// Per-step learning rate: linear warmup reaching `max_lr` on the last warmup
/// step, then `cosine_cycles` equal cosine segments each restarting at `max_lr`.
/// Zero past the final step.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return cfg.max_lr * (step + 1) as f64 / warmup as f64;
    }
    let cycle_len = (total - warmup) as f64 / cfg.cosine_cycles.max(1) as f64;
    let local = (step - warmup) as f64;
    let tau = local - (local / cycle_len).floor() * cycle_len;
    cfg.max_lr * 0.5 * (1.0 + (PI * tau / cycle_len).cos())
}
