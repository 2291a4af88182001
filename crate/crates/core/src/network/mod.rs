//! The feed-forward reconstructor.

pub mod config;
pub mod model;
pub mod weights;

pub use config::{NetworkConfig, UpsamplerKind};
pub use model::{reconstruct, reconstruct_vars, Reconstruction};
pub use weights::{param_count, Params, Weights};
