//! Per-frame inference over a sequence: residual stack, semantic input and
//! correspondences for the newest frame of each window, the forward pass,
//! and the broadcast of cell predictions back to points.

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::io::{MosLabel, PointCloud, Pose};
use crate::network::{correspondence_pyramid, forward_full_with, Logits, Network};
use crate::projection::{
    bev_cell_of, build_correspondence, project_bev, project_range, BevImage, ProjectionConfig, ViewCorrespondence,
};
use crate::residual::{build_residual_stack_with, ResidualStack};
use crate::tensor::Tensor;

/// Everything the network reads for one frame.
#[derive(Debug, Clone)]
pub struct FrameInputs {
    pub stack: ResidualStack,
    /// Height map of the current sweep, the semantic branch input.
    pub semantic: BevImage,
    /// One per scale.
    pub corrs: Vec<ViewCorrespondence>,
}

/// Builds the inputs for the last frame of `frames`. Missing history is
/// zero-filled and flagged in `stack.channel_valid`.
pub fn prepare_frame(
    exec: Exec,
    frames: &[PointCloud],
    poses: &[Pose],
    proj: &ProjectionConfig,
    window: usize,
    scales: usize,
) -> Result<FrameInputs> {
    let stack = build_residual_stack_with(exec, frames, poses, proj, window)?;
    let current = frames.last().expect("stack checked non-empty");
    let semantic = project_bev(current, proj);
    let range = project_range(current, proj);
    let corr = build_correspondence(current, &range, &semantic, proj);
    Ok(FrameInputs {
        stack,
        semantic,
        corrs: correspondence_pyramid(&corr, scales)?,
    })
}

/// Argmax over channels per cell; ties go to the lower class index.
pub fn argmax_cells(logits: &Tensor) -> Result<Vec<usize>> {
    let (c, h, w) = logits.dims3()?;
    if c == 0 {
        return Err(Error::shape("argmax over zero channels"));
    }
    let plane = h * w;
    let d = logits.data();
    Ok((0..plane)
        .map(|i| {
            (1..c).fold(0, |best, ci| if d[ci * plane + i] > d[best * plane + i] { ci } else { best })
        })
        .collect())
}

/// Label of each point from the label of its BEV cell; points outside the
/// grid are unlabeled.
pub fn broadcast_to_points(cloud: &PointCloud, cells: &[MosLabel], proj: &ProjectionConfig) -> Result<Vec<MosLabel>> {
    if cells.len() != proj.bev.height * proj.bev.width {
        return Err(Error::shape(format!(
            "{} cell labels for a {}x{} grid",
            cells.len(),
            proj.bev.height,
            proj.bev.width
        )));
    }
    Ok(cloud
        .points
        .iter()
        .map(|p| bev_cell_of(p, proj).map_or(MosLabel::Unlabeled, |(r, c)| cells[r * proj.bev.width + c]))
        .collect())
}

#[derive(Debug, Clone)]
pub struct FramePrediction {
    pub frame: usize,
    pub logits: Logits,
    pub inputs: FrameInputs,
    pub cells: Vec<MosLabel>,
    pub points: Vec<MosLabel>,
}

/// Runs `net` on every frame. Unless `zero_pad`, the sequence must hold
/// at least `window + 1` frames; early frames always see zero-filled lags.
pub fn infer_sequence(net: &Network, frames: &[PointCloud], poses: &[Pose], zero_pad: bool, exec: Exec) -> Result<Vec<FramePrediction>> {
    let window = net.config().window;
    if frames.len() != poses.len() {
        return Err(Error::invalid(format!("{} frames with {} poses", frames.len(), poses.len())));
    }
    if !zero_pad && frames.len() < window + 1 {
        return Err(Error::InsufficientHistory {
            needed: window + 1,
            available: frames.len(),
        });
    }
    let proj = net.projection();
    let results = exec::map_indexed(exec, frames.len(), |k| {
        let lo = k.saturating_sub(window);
        let inputs = prepare_frame(exec, &frames[lo..=k], &poses[lo..=k], proj, window, net.config().scales())?;
        let logits = forward_full_with(
            exec,
            &inputs.stack,
            &inputs.semantic,
            &inputs.corrs,
            net.weights(),
            net.config(),
            proj,
        )?;
        let cells: Vec<MosLabel> = argmax_cells(&logits.moving)?
            .into_iter()
            .map(|i| MosLabel::from_index(i).expect("three classes"))
            .collect();
        let points = broadcast_to_points(&frames[k], &cells, proj)?;
        Ok(FramePrediction {
            frame: k,
            logits,
            inputs,
            cells,
            points,
        })
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Point;

    #[test]
    fn argmax_ties_prefer_lower_index() {
        let t = Tensor::new(vec![3, 1, 3], vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.5, 2.0, 0.0]).unwrap();
        assert_eq!(argmax_cells(&t).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn broadcast_uses_cell_and_marks_outside_unlabeled() {
        let proj = ProjectionConfig::desk();
        let mut cells = vec![MosLabel::Static; 128 * 128];
        let p = Point::new(1.0, 1.0, 0.0, 0.0);
        let (r, c) = bev_cell_of(&p, &proj).unwrap();
        cells[r * 128 + c] = MosLabel::Moving;
        let cloud = PointCloud::new(vec![p, Point::new(1.05, 1.05, 1.0, 0.0), Point::new(40.0, 0.0, 0.0, 0.0), Point::new(-3.0, 2.0, 0.0, 0.0)]);
        let out = broadcast_to_points(&cloud, &cells, &proj).unwrap();
        assert_eq!(out, vec![MosLabel::Moving, MosLabel::Moving, MosLabel::Unlabeled, MosLabel::Static]);
    }
}
