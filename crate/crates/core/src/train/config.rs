use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glimpse::{GlimpseConfig, RetinaConfig};
use crate::kernel::SgdConfig;
use crate::model::{FrameInput, ModelConfig};

/// Network hyperparameters that do not depend on the data. Frame size,
/// frame count and class count come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub copies: usize,
    pub glimpses: usize,
    pub glimpse_dim: usize,
    pub branch_dim: usize,
    /// `[height, width]` of the finest retina scale; derived from the frame when absent.
    pub glimpse_window: Option<[usize; 2]>,
    pub scales: usize,
    pub scale_factor: usize,
    pub conv_channels: [usize; 2],
    pub attention_hidden: usize,
    pub frame_hidden: usize,
    pub location_variance: f64,
    pub frame_input: FrameInput,
    pub random_initial_state: bool,
    pub greedy_eval: bool,
    pub action_loss_weight: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(79, 9, 1, 2);
        ModelSettings {
            copies: m.copies,
            glimpses: m.glimpses,
            glimpse_dim: m.glimpse.glimpse_dim,
            branch_dim: m.glimpse.branch_dim,
            glimpse_window: None,
            scales: m.glimpse.retina.scales,
            scale_factor: m.glimpse.retina.scale_factor,
            conv_channels: m.conv_channels,
            attention_hidden: m.attention_hidden,
            frame_hidden: m.frame_hidden,
            location_variance: m.location_variance,
            frame_input: m.frame_input,
            random_initial_state: m.random_initial_state,
            greedy_eval: m.greedy_eval,
            action_loss_weight: m.action_loss_weight,
        }
    }
}

impl ModelSettings {
    pub fn model_config(
        &self,
        frame_shape: (usize, usize),
        frames: usize,
        num_classes: usize,
    ) -> Result<ModelConfig> {
        let (h, w) = frame_shape;
        let default = RetinaConfig::default_for(h, w);
        let [wh, ww] = self.glimpse_window.unwrap_or([default.height, default.width]);
        let cfg = ModelConfig {
            glimpses: self.glimpses,
            copies: self.copies,
            conv_channels: self.conv_channels,
            glimpse: GlimpseConfig {
                retina: RetinaConfig {
                    height: wh,
                    width: ww,
                    scales: self.scales,
                    scale_factor: self.scale_factor,
                },
                branch_dim: self.branch_dim,
                glimpse_dim: self.glimpse_dim,
            },
            attention_hidden: self.attention_hidden,
            frame_hidden: self.frame_hidden,
            location_variance: self.location_variance,
            frame_input: self.frame_input,
            random_initial_state: self.random_initial_state,
            greedy_eval: self.greedy_eval,
            action_loss_weight: self.action_loss_weight,
            ..ModelConfig::new(h, w, frames, num_classes)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of the training split held out for early stopping.
    pub validation_fraction: f64,
    pub reinforce_enabled: bool,
    /// Subtract a moving average of the reward from each copy's reward.
    pub baseline_enabled: bool,
    pub baseline_decay: f64,
    /// Standardise channels with training-split statistics.
    pub normalize: bool,
    pub model: ModelSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr: 0.01,
            momentum: 0.9,
            grad_clip: Some(5.0),
            epochs: 100,
            batch_size: 32,
            patience: 10,
            validation_fraction: 0.1,
            reinforce_enabled: true,
            baseline_enabled: true,
            baseline_decay: 0.9,
            normalize: true,
            model: ModelSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train {what}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            grad_clip: self.grad_clip,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_model_defaults() {
        let t = TrainConfig::default();
        t.validate().unwrap();
        let m = t.model.model_config((79, 9), 5, 6).unwrap();
        assert_eq!(m, ModelConfig::new(79, 9, 5, 6));
        assert_eq!((t.batch_size, t.epochs, t.patience), (32, 100, 10));
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let t = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&t.to_toml()).unwrap(), t);
        let p = TrainConfig::from_toml("epochs = 3\n[model]\ncopies = 2\n").unwrap();
        assert_eq!((p.epochs, p.model.copies, p.model.glimpses), (3, 2, 30));
        assert!(TrainConfig::from_toml("epoch = 3").is_err());
        assert!(TrainConfig::from_toml("lr = -1.0").is_err());
    }
}
