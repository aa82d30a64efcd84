//! The MV-MOS forward graph and its parameters.
//!
//! Parameter paths (S scales, `i` a scale index):
//!
//! | path | role |
//! |---|---|
//! | `motion.rv.stem.conv`, `motion.rv.down.{i}.conv` | range-view encoder, circular padding |
//! | `motion.bev.stem.conv`, `motion.down.{i}.conv` | BEV motion encoder |
//! | `motion.fuse_rv.{i}.{conv,attn.channel,attn.spatial}` | range-view to BEV fusion |
//! | `motion.fuse_sem.{i}.{conv,attn.channel,attn.spatial}` | semantic guidance on the way down |
//! | `semantic.stem.conv`, `semantic.down.{i}.conv` | semantic encoder |
//! | `fusion.ss2d.in_proj`, `fusion.ss2d.dir{0..3}.*` | bottleneck SS2D |
//! | `fusion.gate.{spatial,channel}` | bottleneck gate (1x1) |
//! | `semantic.up.{i}.conv`, `semantic.head` | semantic decoder, movable logits |
//! | `motion.up.{i}.conv`, `motion.head` | motion decoder, moving logits |
//!
//! A conv path holds `kernel`, `bias`, `bn.scale`, `bn.shift`, `bn.mean` and
//! `bn.var`; a 1x1 path holds `weight` and `bias`.

mod blocks;
mod config;
mod model;
mod ss2d;
mod weights;

pub use blocks::{
    attention_hwc, down_step, fuse, fuse_bev_rv, fuse_semantic_down, motion_down_step, motion_up_step,
    saff_gate, semantic_up_step, up_step, AttentionParams, GateOutput,
};
pub use config::NetworkConfig;
pub use model::{correspondence_pyramid, forward_full, forward_full_with, Logits, Network};
pub use ss2d::{
    expand_direction, scan_order, selective_scan, selective_scan_with, ss2d, ss2d_block, ss2d_block_with,
    ss2d_with, DirectionParams, ScanSequence, Ss2dParams,
};
pub(crate) use ss2d::ss2d_impl;
pub use weights::{param_specs, Init, ParamSpec, WeightStore};
