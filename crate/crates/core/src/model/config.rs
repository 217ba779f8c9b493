use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glimpse::GlimpseConfig;
use crate::kernel::POOL_WIDTH;

/// What the frame-stream LSTM consumes after each frame's glimpse sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameInput {
    /// Final attention hidden state `h_T`.
    #[default]
    Hidden,
    /// Final action distribution `softmax(a_T)`.
    Action,
}

/// Every size and switch of the network; stored next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    /// Frames per sample, `F`.
    pub frames: usize,
    pub num_classes: usize,
    /// Glimpses per frame, `T`.
    pub glimpses: usize,
    /// Monte Carlo copies per sample, `M`.
    pub copies: usize,
    /// Output channels of the two convolutional sections.
    pub conv_channels: [usize; 2],
    pub glimpse: GlimpseConfig,
    pub attention_hidden: usize,
    pub frame_hidden: usize,
    /// Fixed variance of the Gaussian location policy.
    pub location_variance: f64,
    pub frame_input: FrameInput,
    /// Draw initial recurrent states uniformly instead of starting from zeros.
    pub random_initial_state: bool,
    /// Evaluate with the policy mean instead of sampled locations.
    pub greedy_eval: bool,
    /// Weight of the cross-entropy on each frame's final action distribution.
    pub action_loss_weight: f64,
}

impl ModelConfig {
    pub fn new(frame_height: usize, frame_width: usize, frames: usize, num_classes: usize) -> Self {
        ModelConfig {
            frame_height,
            frame_width,
            frames,
            num_classes,
            glimpses: 30,
            copies: 20,
            conv_channels: [16, 16],
            glimpse: GlimpseConfig::for_frame(frame_height, frame_width),
            attention_hidden: 100,
            frame_hidden: 1000,
            location_variance: 0.22,
            frame_input: FrameInput::Hidden,
            random_initial_state: false,
            greedy_eval: false,
            action_loss_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frame_height", self.frame_height),
            ("frames", self.frames),
            ("glimpses", self.glimpses),
            ("copies", self.copies),
            ("conv_channels[0]", self.conv_channels[0]),
            ("conv_channels[1]", self.conv_channels[1]),
            ("attention_hidden", self.attention_hidden),
            ("frame_hidden", self.frame_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if self.frame_width / POOL_WIDTH < POOL_WIDTH {
            return Err(Error::Config(format!(
                "frame width {} collapses below {POOL_WIDTH} before the second pooling",
                self.frame_width
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(self.location_variance > 0.0 && self.location_variance.is_finite()) {
            return Err(Error::Config(format!(
                "location variance {} must be positive",
                self.location_variance
            )));
        }
        if !(self.action_loss_weight >= 0.0) {
            return Err(Error::Config("action loss weight must be non-negative".into()));
        }
        self.glimpse.validate()
    }

    /// Flattened width after both pooling stages.
    pub fn encoder_flat_len(&self) -> usize {
        self.conv_channels[1] * self.frame_height * (self.frame_width / POOL_WIDTH / POOL_WIDTH)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
