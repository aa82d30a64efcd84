//! Sequence ingestion in the KITTI layout, MOS label remapping, ego-motion
//! transforms, and the synthetic ray-cast scene generator.

mod cloud;
mod labels;
mod pose;
mod synth;

pub use cloud::{read_point_cloud_bin, write_point_cloud_bin, Point, PointCloud};
pub use labels::{
    decode_prediction, encode_prediction, read_labels, remap_mos, remap_movable, write_labels, MosLabel,
    MovableLabel, PRED_MOVING, PRED_STATIC, RAW_BUILDING,
    RAW_CAR, RAW_MOVING_CAR, RAW_ROAD,
};
pub use pose::{read_calib_tr, read_poses, transform_to_frame, write_poses, Pose};
pub use synth::{synth_sequence, BoxSpec, DynamicBoxSpec, SensorSpec, SyntheticFrame, SyntheticSceneSpec};

use std::path::{Path, PathBuf};

/// File naming for frame `i` inside a KITTI-style sequence directory.
pub fn frame_name(i: usize) -> String {
    format!("{i:06}")
}

/// Sorted list of `*.ext` files in `dir`.
pub fn list_frames(dir: &Path, ext: &str) -> crate::Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| crate::Error::io(dir, e))?.path();
        if p.extension().and_then(|s| s.to_str()) == Some(ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
