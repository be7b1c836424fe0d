//! Network configuration, assembly and cost accounting.

mod config;
mod network;

pub use config::{Ablation, ModelConfig, LEVELS, SPATIAL_MULTIPLE};
pub(crate) use config::parse;
pub use network::{count_params, estimate_macs, Encoded, FfmUnit, Network};
