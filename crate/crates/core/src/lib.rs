//! Multi-scale image restoration: tensors with reverse-mode autodiff, activation-free
//! blocks, a U-shaped network with feature fusion and bottleneck attention, plus the
//! data, metric and training utilities around it.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{DegradationSpec, ImagePair};
pub use error::{DivergenceReport, Error, Result};
pub use metrics::{ChannelMode, MetricReport};
pub use model::{count_params, estimate_macs, Ablation, ModelConfig, Network};
pub use nn::ParamStore;
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{TrainOptions, TrainState};
