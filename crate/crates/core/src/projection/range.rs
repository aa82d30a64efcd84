use super::ProjectionConfig;
use crate::io::{Point, PointCloud};
use crate::tensor::Tensor;

/// Spherical projection of one sweep. Invalid pixels hold -1.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    /// (1, H, W) ranges in metres.
    pub values: Tensor,
    /// Contributing point per pixel.
    pub point_index: Vec<Option<u32>>,
    /// Points at the origin that were skipped.
    pub skipped_zero: usize,
    /// Points beyond `max_range`.
    pub discarded_far: usize,
}

impl RangeImage {
    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.values.data()[i] >= 0.0
    }
}

/// Pixel (column u, row v) of a point, or `None` for zero-length and
/// out-of-range points.
pub fn rv_pixel(p: &Point, cfg: &ProjectionConfig) -> Option<(usize, usize)> {
    let r = p.range();
    if r == 0.0 || r > cfg.rv.max_range {
        return None;
    }
    let (h, w) = (cfg.rv.height as f64, cfg.rv.width as f64);
    let fov_up = cfg.rv.fov_up_deg.to_radians();
    let fov_down = cfg.rv.fov_down_deg.to_radians();
    let yaw = (p.y as f64).atan2(p.x as f64);
    let pitch = (p.z as f64 / r).asin();
    let u = (0.5 * (1.0 - yaw / std::f64::consts::PI) * w).floor();
    let v = ((1.0 - (pitch - fov_down) / (fov_up - fov_down)) * h).floor();
    let u = u.clamp(0.0, w - 1.0) as usize;
    let v = v.clamp(0.0, h - 1.0) as usize;
    Some((u, v))
}

/// Nearest return wins each pixel; ties go to the smaller point index.
pub fn project_range(cloud: &PointCloud, cfg: &ProjectionConfig) -> RangeImage {
    let (h, w) = (cfg.rv.height, cfg.rv.width);
    let mut best: Vec<Option<(f64, u32)>> = vec![None; h * w];
    let (mut skipped_zero, mut discarded_far) = (0, 0);
    for (i, p) in cloud.points.iter().enumerate() {
        let r = p.range();
        if r == 0.0 {
            skipped_zero += 1;
            continue;
        }
        let Some((u, v)) = rv_pixel(p, cfg) else {
            discarded_far += 1;
            continue;
        };
        let slot = &mut best[v * w + u];
        // Strict comparison keeps the earlier index on ties.
        if slot.is_none_or(|(br, _)| r < br) {
            *slot = Some((r, i as u32));
        }
    }
    let values = best
        .iter()
        .map(|b| b.map_or(-1.0, |(r, _)| r as f32))
        .collect();
    RangeImage {
        values: Tensor::from_parts(vec![1, h, w], values, "project_range")
            .expect("finite ranges"),
        point_index: best.iter().map(|b| b.map(|(_, i)| i)).collect(),
        skipped_zero,
        discarded_far,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f32; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point::new(p[0], p[1], p[2], 0.0)).collect())
    }

    #[test]
    fn forward_point_lands_in_expected_pixel() {
        let cfg = ProjectionConfig::desk();
        let img = project_range(&cloud(&[[10.0, 0.0, 0.0]]), &cfg);
        // u = floor(0.5 * 512) = 256; v = floor((1 - 25/28) * 32) = 3.
        let i = 3 * 512 + 256;
        assert_eq!(img.values.data()[i], 10.0);
        assert_eq!(img.point_index[i], Some(0));
        assert_eq!(img.values.data().iter().filter(|v| **v >= 0.0).count(), 1);
    }

    #[test]
    fn left_point_is_quarter_turn() {
        let cfg = ProjectionConfig::desk();
        assert_eq!(rv_pixel(&Point::new(0.0, 10.0, 0.0, 0.0), &cfg), Some((128, 3)));
    }

    #[test]
    fn nearest_wins_and_ties_keep_first() {
        let cfg = ProjectionConfig::desk();
        let img = project_range(&cloud(&[[10.0, 0.0, 0.0], [8.0, 0.0, 0.0], [8.0, 0.0, 0.0]]), &cfg);
        let i = 3 * 512 + 256;
        assert_eq!(img.values.data()[i], 8.0);
        assert_eq!(img.point_index[i], Some(1));
    }

    #[test]
    fn zero_and_far_points_counted() {
        let cfg = ProjectionConfig::desk();
        let img = project_range(&cloud(&[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]]), &cfg);
        assert_eq!(img.skipped_zero, 1);
        assert_eq!(img.discarded_far, 1);
        assert!(img.values.data().iter().all(|v| *v == -1.0));
        assert!(img.point_index.iter().all(Option::is_none));
    }
}
