//! Moving object segmentation for LiDAR sequences from fused range-view and
//! bird's-eye-view motion cues.
//!
//! The pipeline: [`io`] reads KITTI-layout sequences (or synthesizes them),
//! [`projection`] maps sweeps to range-view and BEV images, [`residual`]
//! builds ego-compensated motion evidence, [`network`] runs the dual-branch
//! fusion network, and [`loss`] scores its output.

pub mod error;
pub mod exec;
pub mod image;
pub mod io;
pub mod loss;
pub mod network;
pub mod oracle;
pub mod pipeline;
pub mod projection;
pub mod residual;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::Tensor;
