//! A small convolutional regression engine: 2-D convolution, max pooling,
//! dense layers, ReLU/linear activations, MSE loss and RMSProp.
//!
//! Tensors are NCHW. A capture enters as a `1 x 2 x N` image whose rows are
//! the I and Q sample streams.

mod checkpoint;
mod config;
mod network;
mod optim;
pub mod search;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Activation, LayerSpec, NetworkConfig, Shape3};
pub use network::{ForwardPass, Gradients, LayerParams, Network};
pub use optim::{rmsprop_step, RmsProp};
pub use tensor::{frames_to_tensor, Scalar, Tensor};
pub use train::{train, EpochStats, NetworkModel, TrainConfig, TrainingMeta};
