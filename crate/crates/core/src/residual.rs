//! Motion evidence from ego-compensated history.
//!
//! Range-view residuals are relative range changes per pixel. BEV residuals
//! compare height extents (`max z - min z` per cell): the reference side is
//! the current sweep, and the history side for lag `j` stacks the window
//! that ends at lag `j`, i.e. every compensated sweep from the oldest one
//! in the window up to lag `j`.

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::io::{transform_to_frame, PointCloud, Pose};
use crate::projection::{project_range, stacked_bev, BevImage, ProjectionConfig, RangeImage};
use crate::tensor::Tensor;

/// Range values below this are treated as unreliable denominators.
pub const RANGE_EPS: f32 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStack {
    /// (N, H, W); channel `j` is lag `j + 1`.
    pub rv: Tensor,
    /// (N, H̃, W̃)
    pub bev: Tensor,
    pub window: usize,
    /// Index of the reference frame in the slice the stack was built from.
    pub reference_frame: usize,
    /// False for lags that had no history and were zero-filled.
    pub channel_valid: Vec<bool>,
}

/// `|I_past - I_ref| / I_ref` where both pixels are valid and `I_ref >= RANGE_EPS`.
pub fn residual_rv(reference: &RangeImage, past: &RangeImage) -> Result<Tensor> {
    if reference.values.shape() != past.values.shape() {
        return Err(Error::shape(format!(
            "range images {:?} vs {:?}",
            reference.values.shape(),
            past.values.shape()
        )));
    }
    let data = reference
        .values
        .data()
        .iter()
        .zip(past.values.data())
        .map(|(&r0, &rk)| {
            if r0 >= RANGE_EPS && rk >= 0.0 {
                (rk - r0).abs() / r0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_parts(reference.values.shape().to_vec(), data, "residual_rv")
}

/// `|I_past - I_ref|` over cells valid on both sides.
pub fn residual_bev(reference: &BevImage, past: &BevImage) -> Result<Tensor> {
    if reference.values.shape() != past.values.shape() {
        return Err(Error::shape(format!(
            "BEV images {:?} vs {:?}",
            reference.values.shape(),
            past.values.shape()
        )));
    }
    let data = reference
        .values
        .data()
        .iter()
        .zip(past.values.data())
        .zip(reference.valid.iter().zip(&past.valid))
        .map(|((a, b), (va, vb))| if *va && *vb { (a - b).abs() } else { 0.0 })
        .collect();
    Tensor::from_parts(reference.values.shape().to_vec(), data, "residual_bev")
}

/// Residual stack for the last frame of `frames` over `window` lags.
/// Requires `window + 1` frames.
pub fn build_residual_stack(
    frames: &[PointCloud],
    poses: &[Pose],
    cfg: &ProjectionConfig,
    window: usize,
) -> Result<ResidualStack> {
    if frames.len() < window + 1 {
        return Err(Error::InsufficientHistory {
            needed: window + 1,
            available: frames.len(),
        });
    }
    build_residual_stack_with(Exec::default(), frames, poses, cfg, window)
}

/// Like [`build_residual_stack`], but lags without history are zero-filled
/// and flagged in `channel_valid`.
pub fn build_residual_stack_with(
    exec: Exec,
    frames: &[PointCloud],
    poses: &[Pose],
    cfg: &ProjectionConfig,
    window: usize,
) -> Result<ResidualStack> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    if frames.is_empty() || frames.len() != poses.len() {
        return Err(Error::invalid(format!(
            "{} frames with {} poses",
            frames.len(),
            poses.len()
        )));
    }
    cfg.validate()?;
    let k = frames.len() - 1;
    let available = k.min(window);

    let compensated: Vec<PointCloud> = exec::map_indexed(exec, available, |j| {
        transform_to_frame(&frames[k - j - 1], &poses[k - j - 1], &poses[k])
    });
    let reference_rv = project_range(&frames[k], cfg);
    let reference_bev = stacked_bev(&[&frames[k]], cfg);

    let channels: Vec<Result<(Tensor, Tensor)>> = exec::map_indexed(exec, available, |j| {
        let past_rv = project_range(&compensated[j], cfg);
        let window_clouds: Vec<&PointCloud> = compensated[j..].iter().collect();
        let past_bev = stacked_bev(&window_clouds, cfg);
        Ok((
            residual_rv(&reference_rv, &past_rv)?,
            residual_bev(&reference_bev, &past_bev)?,
        ))
    });

    let (rh, rw) = (cfg.rv.height, cfg.rv.width);
    let (bh, bw) = (cfg.bev.height, cfg.bev.width);
    let mut rv = vec![0.0f32; window * rh * rw];
    let mut bev = vec![0.0f32; window * bh * bw];
    for (j, ch) in channels.into_iter().enumerate() {
        let (r, b) = ch?;
        rv[j * rh * rw..(j + 1) * rh * rw].copy_from_slice(r.data());
        bev[j * bh * bw..(j + 1) * bh * bw].copy_from_slice(b.data());
    }
    Ok(ResidualStack {
        rv: Tensor::from_parts(vec![window, rh, rw], rv, "residual stack")?,
        bev: Tensor::from_parts(vec![window, bh, bw], bev, "residual stack")?,
        window,
        reference_frame: k,
        channel_valid: (0..window).map(|j| j < available).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Point;
    use crate::projection::{project_bev, project_range};

    fn range_image(vals: Vec<f32>) -> RangeImage {
        let n = vals.len();
        RangeImage {
            values: Tensor::new(vec![1, 1, n], vals).unwrap(),
            point_index: vec![None; n],
            skipped_zero: 0,
            discarded_far: 0,
        }
    }

    fn bev_image(vals: Vec<f32>, valid: Vec<bool>) -> BevImage {
        let n = vals.len();
        BevImage {
            values: Tensor::new(vec![1, 1, n], vals).unwrap(),
            valid,
            point_index: vec![None; n],
            counts: vec![0; n],
            discarded: 0,
        }
    }

    #[test]
    fn rv_residual_values() {
        let r0 = range_image(vec![10.0, 5.0, -1.0, 0.005]);
        let rk = range_image(vec![12.0, -1.0, 7.0, 3.0]);
        let res = residual_rv(&r0, &rk).unwrap();
        assert!((res.data()[0] - 0.2).abs() < 1e-7);
        assert_eq!(&res.data()[1..], &[0.0, 0.0, 0.0]);
        assert!(residual_rv(&r0, &r0).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(residual_rv(&r0, &range_image(vec![1.0])).is_err());
    }

    #[test]
    fn rv_residual_asymmetry() {
        let a = range_image(vec![10.0]);
        let b = range_image(vec![12.0]);
        let ab = residual_rv(&a, &b).unwrap().data()[0];
        let ba = residual_rv(&b, &a).unwrap().data()[0];
        assert!((ab * 10.0 - ba * 12.0).abs() < 1e-6);
    }

    #[test]
    fn bev_residual_values() {
        let a = bev_image(vec![1.5, 2.0, 0.0], vec![true, true, false]);
        let b = bev_image(vec![0.3, 2.0, 4.0], vec![true, false, true]);
        let res = residual_bev(&a, &b).unwrap();
        assert!((res.data()[0] - 1.2).abs() < 1e-6);
        assert_eq!(&res.data()[1..], &[0.0, 0.0]);
        assert_eq!(residual_bev(&a, &b).unwrap(), residual_bev(&b, &a).unwrap());
        assert!(residual_bev(&a, &a).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_frame_gives_zero_stack() {
        let cfg = ProjectionConfig::desk();
        let cloud = PointCloud::new(vec![
            Point::new(10.0, 0.0, -1.0, 0.0),
            Point::new(5.0, 3.0, -1.7, 0.0),
            Point::new(5.05, 3.0, 0.2, 0.0),
        ]);
        let pose = Pose::from_translation([2.0, 1.0, 0.0]);
        let s = build_residual_stack(&[cloud.clone(), cloud], &[pose, pose], &cfg, 1).unwrap();
        assert!(s.rv.data().iter().all(|v| *v == 0.0));
        assert!(s.bev.data().iter().all(|v| *v == 0.0));
        assert_eq!(s.channel_valid, vec![true]);
    }

    #[test]
    fn missing_history() {
        let cfg = ProjectionConfig::desk();
        let cloud = PointCloud::new(vec![Point::new(10.0, 0.0, -1.0, 0.0)]);
        let frames = vec![cloud.clone(), cloud];
        let poses = vec![Pose::identity(); 2];
        assert!(matches!(
            build_residual_stack(&frames, &poses, &cfg, 4),
            Err(Error::InsufficientHistory { needed: 5, available: 2 })
        ));
        let s = build_residual_stack_with(Exec::Sequential, &frames, &poses, &cfg, 4).unwrap();
        assert_eq!(s.channel_valid, vec![true, false, false, false]);
        assert_eq!(s.rv.shape(), &[4, 32, 512]);
        assert_eq!(s.bev.shape(), &[4, 128, 128]);
    }

    #[test]
    fn stack_channels_match_direct_evaluation() {
        let cfg = ProjectionConfig::desk();
        let frames: Vec<PointCloud> = (0..3)
            .map(|k| {
                PointCloud::new(vec![
                    Point::new(6.0 + k as f32 * 0.3, 1.0, -1.0, 0.0),
                    Point::new(6.0 + k as f32 * 0.3, 1.0, 0.5, 0.0),
                    Point::new(-4.0, 2.0, -1.5, 0.0),
                ])
            })
            .collect();
        let poses = vec![Pose::identity(); 3];
        let s = build_residual_stack(&frames, &poses, &cfg, 2).unwrap();
        let want = residual_rv(&project_range(&frames[2], &cfg), &project_range(&frames[0], &cfg)).unwrap();
        assert_eq!(&s.rv.data()[32 * 512..], want.data());
        // Deepest lag: single-frame extents on both sides. Lag 1 stacks both past sweeps.
        let a = stacked_bev(&[&frames[2]], &cfg);
        let b = stacked_bev(&[&frames[0]], &cfg);
        assert_eq!(&s.bev.data()[128 * 128..], residual_bev(&a, &b).unwrap().data());
        let b01 = stacked_bev(&[&frames[1], &frames[0]], &cfg);
        assert_eq!(&s.bev.data()[..128 * 128], residual_bev(&a, &b01).unwrap().data());
        assert!(s.rv.data().iter().chain(s.bev.data()).all(|v| *v >= 0.0));
        let _ = project_bev(&frames[0], &cfg);
    }
}
