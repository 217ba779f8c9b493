//! Multi-resolution retina and the glimpse network fusing "what" and "where".

mod network;
mod retina;

pub use network::{GlimpseCache, GlimpseConfig, GlimpseGrads, GlimpseNet};
pub use retina::{extract_retina, retina_backward, Location, RetinaConfig, RetinaPatch};
