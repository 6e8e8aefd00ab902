//! Minimal CPU neural-network engine: NHWC tensors, the layer kinds the
//! classifier and regressor need, losses, Adam, Xavier init and a binary
//! weight format.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod init;
pub mod loss;
pub mod network;
pub mod pool;
mod real;
pub mod tensor;
pub mod weights;

pub use activation::{relu, sigmoid};
pub use adam::{adam_step, Adam, AdamState};
pub use batchnorm::{batchnorm_apply, BatchNorm, RunningStats};
pub use conv::{conv2d_forward, Conv2d};
pub use dense::{dense_forward, Dense};
pub use init::{xavier_init, xavier_uniform};
pub use loss::{bce_loss, smooth_l1_loss, LossValue};
pub use network::{Layer, Mode, Network, Param};
pub use pool::{pool2d_forward, Pool2d, PoolKind};
pub use real::Real;
pub use tensor::Tensor;
pub use weights::{load_weights, save_weights};
