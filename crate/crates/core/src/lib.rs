//! Feed-forward sparse-view 3D reconstruction with pixel-aligned Gaussians.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense arrays and a per-step reverse-mode tape
//! * [`camera`]: pinhole cameras, rays, Plücker embeddings, camera rigs
//! * [`gaussian`]: attribute maps, activation into Gaussian sets, PLY interop
//! * [`render`]: differentiable tile rasterizer and a brute-force reference
//! * [`network`]: tokenizer, multi-view encoder, windowed-attention upsampler
//! * [`train`]: losses, deferred backpropagation, AdamW, training loops
//! * [`data`]: procedural scenes and multi-view datasets
//! * [`mesh`]: TSDF fusion, marching cubes, floater removal
//! * [`eval`]: PSNR, SSIM, Chamfer distance, F-score, ICP

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod camera;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod network;
pub mod render;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};
