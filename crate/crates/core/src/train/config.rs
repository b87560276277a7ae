use serde::{Deserialize, Serialize};

use crate::cycle::LossWeights;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// Optimization settings for one training phase. [`Default`] gives the
/// published pretraining values; [`TrainConfig::finetune_default`] the
/// published fine-tuning values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    /// Mini-batch updates between scheduled decays.
    pub lr_decay_every: u64,
    /// Epochs without validation improvement before an extra decay.
    pub plateau_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Keep every k-th frame when cutting pretraining triplets; every phase
    /// offset contributes its own subsequence.
    pub subsample_factor: usize,
    /// Fraction of samples held out for best-epoch selection.
    pub val_fraction: f64,
    pub reverse_probability: f64,
    /// Cap on the number of samples drawn (after a seeded shuffle).
    pub sample_budget: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::pretrain_default()
    }
}

impl TrainConfig {
    pub fn pretrain_default() -> Self {
        TrainConfig {
            phase: Phase::Pretrain,
            epochs: 400,
            batch_size: 16,
            lr0: 3e-4,
            lr_decay_factor: 2.0,
            lr_decay_every: 400_000,
            plateau_patience: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.05,
            loss_weights: LossWeights::default(),
            seed: 0,
            subsample_factor: 1,
            val_fraction: 0.1,
            reverse_probability: 0.5,
            sample_budget: None,
        }
    }

    pub fn finetune_default() -> Self {
        TrainConfig {
            phase: Phase::Finetune,
            epochs: 50,
            lr0: 2e-3,
            weight_decay: 0.0,
            ..TrainConfig::pretrain_default()
        }
    }

    /// Short CPU schedule for the desk network.
    pub fn desk_pretrain() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr0: 1e-3,
            subsample_factor: 3,
            ..TrainConfig::pretrain_default()
        }
    }

    pub fn desk_finetune() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            lr0: 2e-4,
            ..TrainConfig::finetune_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay_factor > 1.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!("lr_decay_factor must exceed 1, got {}", self.lr_decay_factor));
        }
        if self.lr_decay_every < 1 {
            return bad("lr_decay_every must be at least 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.subsample_factor < 1 {
            return bad("subsample_factor must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.reverse_probability) {
            return bad(format!(
                "reverse_probability must lie in [0, 1], got {}",
                self.reverse_probability
            ));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must be at most {}, got {}", i64::MAX, self.seed));
        }
        if self.sample_budget == Some(0) {
            return bad("sample_budget must be at least 1".into());
        }
        self.loss_weights.validate()
    }
}

/// Learning rate after `step` updates and `plateau_count` plateau decays.
pub fn lr_schedule(step: u64, cfg: &TrainConfig, plateau_count: u32) -> f64 {
    let decays = step / cfg.lr_decay_every + plateau_count as u64;
    cfg.lr0 / cfg.lr_decay_factor.powi(decays.min(i32::MAX as u64) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_period() {
        let cfg = TrainConfig::pretrain_default();
        assert_eq!(lr_schedule(0, &cfg, 0), 3e-4);
        assert_eq!(lr_schedule(399_999, &cfg, 0), 3e-4);
        assert_eq!(lr_schedule(400_000, &cfg, 0), 1.5e-4);
        assert_eq!(lr_schedule(800_000, &cfg, 0), 7.5e-5);
        assert_eq!(lr_schedule(0, &cfg, 1), 1.5e-4);
    }

    #[test]
    fn finetune_defaults() {
        let cfg = TrainConfig::finetune_default();
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.lr0, 2e-3);
        assert_eq!(cfg.weight_decay, 0.0);
        assert_eq!(cfg.loss_weights.gamma_cc1, 0.5);
        assert_eq!(cfg.loss_weights.gamma_cc2, 0.3);
    }

    #[test]
    fn rejects_bad_values() {
        for cfg in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lr0: 0.0, ..Default::default() },
            TrainConfig { lr_decay_factor: 1.0, ..Default::default() },
            TrainConfig { subsample_factor: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert!(TrainConfig::default().validate().is_ok());
    }
}
