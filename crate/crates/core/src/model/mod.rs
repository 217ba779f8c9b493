//! The dual-stream recurrent attention network.

mod config;
mod encoder;
mod network;
mod policy;

pub use config::{FrameInput, ModelConfig};
pub use encoder::{Encoder, EncoderCache};
pub use network::{
    argmax, config_path, copy_rngs, reward, AttendOutput, AttentionState, BackwardOptions,
    EpisodeTrace, LossParts, Mode, RaafModel, SampleTrace,
};
pub use policy::{
    gaussian_log_density, gaussian_score, initial_location, reinforce_term, sample_location, LocationRecord,
    UNIFORM_LOG_DENSITY,
};
