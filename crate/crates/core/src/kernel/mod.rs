//! Dense tensor math with hand-written backward passes.

pub mod checkpoint;
pub mod layers;
pub mod lstm;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use layers::{
    conv2d_bwd, conv2d_fwd, linear_bwd, linear_fwd, maxpool_bwd, maxpool_fwd, relu_bwd, relu_fwd,
    sigmoid, softmax, POOL_WIDTH, softmax_xent_bwd, softmax_xent_fwd, Conv2d, Linear, PoolCache,
};
pub use lstm::{lstm_cell_bwd, lstm_cell_fwd, LstmCache, LstmCell, LstmGrads};
pub use optim::{SgdConfig, SgdMomentum};
pub use rng::Rng;
pub use tensor::{ParamSlot, Tensor};
