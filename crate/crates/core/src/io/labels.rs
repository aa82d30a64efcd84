use std::path::Path;

use crate::error::{Error, Result};

pub const RAW_CAR: u32 = 10;
pub const RAW_ROAD: u32 = 40;
pub const RAW_BUILDING: u32 = 50;
pub const RAW_MOVING_CAR: u32 = 252;
/// Written to prediction files for moving and static points.
pub const PRED_MOVING: u32 = 251;
pub const PRED_STATIC: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MosLabel {
    Unlabeled = 0,
    Static = 1,
    Moving = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MovableLabel {
    Unlabeled = 0,
    Immovable = 1,
    Movable = 2,
}

impl MosLabel {
    pub fn from_index(i: usize) -> Option<Self> {
        [MosLabel::Unlabeled, MosLabel::Static, MosLabel::Moving].get(i).copied()
    }
}

impl MovableLabel {
    pub fn from_index(i: usize) -> Option<Self> {
        [MovableLabel::Unlabeled, MovableLabel::Immovable, MovableLabel::Movable].get(i).copied()
    }
}

/// Prediction-file encoding: moving 251, static 9, unlabeled 0.
pub fn encode_prediction(l: MosLabel) -> u32 {
    match l {
        MosLabel::Unlabeled => 0,
        MosLabel::Static => PRED_STATIC,
        MosLabel::Moving => PRED_MOVING,
    }
}

/// Reads a prediction label; 251 and the raw moving ids both count as moving.
pub fn decode_prediction(raw: u32) -> MosLabel {
    match semantic(raw) {
        PRED_MOVING => MosLabel::Moving,
        _ => remap_mos(raw),
    }
}

const MOVABLE_IDS: [u32; 9] = [10, 11, 13, 15, 18, 20, 30, 31, 32];

fn semantic(raw: u32) -> u32 {
    raw & 0xFFFF
}

fn is_moving_id(id: u32) -> bool {
    (252..=259).contains(&id)
}

/// Moving-head target for a raw label (instance bits are ignored).
pub fn remap_mos(raw: u32) -> MosLabel {
    match semantic(raw) {
        0 => MosLabel::Unlabeled,
        id if is_moving_id(id) => MosLabel::Moving,
        _ => MosLabel::Static,
    }
}

/// Movable-head target for a raw label.
pub fn remap_movable(raw: u32) -> MovableLabel {
    match semantic(raw) {
        0 => MovableLabel::Unlabeled,
        id if is_moving_id(id) || MOVABLE_IDS.contains(&id) => MovableLabel::Movable,
        _ => MovableLabel::Immovable,
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::malformed(
            path,
            format!("{} bytes is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u32]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
