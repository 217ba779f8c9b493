//! Activity frames from multimodal wearable-sensor windows and a dual-stream
//! recurrent attention classifier trained with a hybrid cross-entropy and
//! REINFORCE objective.

pub mod dataset;
pub mod error;
pub mod frames;
pub mod glimpse;
pub mod gradcheck;
pub mod kernel;
pub mod model;
pub mod train;

pub use error::{Error, Result};
