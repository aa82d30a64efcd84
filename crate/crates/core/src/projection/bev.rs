use super::ProjectionConfig;
use crate::io::{Point, PointCloud};
use crate::tensor::Tensor;

/// Bird's-eye-view grid. Rows follow x, columns follow y; empty cells hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    /// (1, H, W)
    pub values: Tensor,
    pub valid: Vec<bool>,
    /// Point that defines each cell's value. For stacked images the index
    /// runs over the concatenation of the input clouds.
    pub point_index: Vec<Option<u32>>,
    /// Points that fell inside each cell.
    pub counts: Vec<u32>,
    /// Points outside the grid or the z clip.
    pub discarded: usize,
}

impl BevImage {
    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Cell (row, col) of a point; the x and y bounds are half-open.
pub fn bev_cell_of(p: &Point, cfg: &ProjectionConfig) -> Option<(usize, usize)> {
    let b = &cfg.bev;
    let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
    if x < b.x_min || y < b.y_min || z < b.z_min || z > b.z_max {
        return None;
    }
    let (dx, dy) = b.cell_size();
    let row = ((x - b.x_min) / dx).floor() as usize;
    let col = ((y - b.y_min) / dy).floor() as usize;
    (row < b.height && col < b.width).then_some((row, col))
}

struct CellAcc {
    max: f32,
    min: f32,
    top: u32,
    count: u32,
}

fn accumulate<'a>(
    points: impl Iterator<Item = &'a Point>,
    cfg: &ProjectionConfig,
) -> (Vec<Option<CellAcc>>, usize) {
    let n = cfg.bev.height * cfg.bev.width;
    let mut cells: Vec<Option<CellAcc>> = (0..n).map(|_| None).collect();
    let mut discarded = 0;
    for (i, p) in points.enumerate() {
        let Some((r, c)) = bev_cell_of(p, cfg) else {
            discarded += 1;
            continue;
        };
        let cell = &mut cells[r * cfg.bev.width + c];
        match cell {
            None => {
                *cell = Some(CellAcc {
                    max: p.z,
                    min: p.z,
                    top: i as u32,
                    count: 1,
                })
            }
            Some(acc) => {
                if p.z > acc.max {
                    acc.max = p.z;
                    acc.top = i as u32;
                }
                acc.min = acc.min.min(p.z);
                acc.count += 1;
            }
        }
    }
    (cells, discarded)
}

fn assemble(
    cells: Vec<Option<CellAcc>>,
    discarded: usize,
    cfg: &ProjectionConfig,
    value: impl Fn(&CellAcc) -> f32,
) -> BevImage {
    let values = cells.iter().map(|c| c.as_ref().map_or(0.0, &value)).collect();
    BevImage {
        values: Tensor::from_parts(vec![1, cfg.bev.height, cfg.bev.width], values, "bev")
            .expect("finite heights"),
        valid: cells.iter().map(Option::is_some).collect(),
        point_index: cells.iter().map(|c| c.as_ref().map(|a| a.top)).collect(),
        counts: cells.iter().map(|c| c.as_ref().map_or(0, |a| a.count)).collect(),
        discarded,
    }
}

/// Single-frame height map: each cell holds the maximum z of its points.
pub fn project_bev(cloud: &PointCloud, cfg: &ProjectionConfig) -> BevImage {
    let (cells, discarded) = accumulate(cloud.points.iter(), cfg);
    assemble(cells, discarded, cfg, |a| a.max)
}

/// Height extent over a window of clouds already expressed in one frame:
/// each cell holds `max z - min z` over every point of every cloud.
pub fn stacked_bev(clouds: &[&PointCloud], cfg: &ProjectionConfig) -> BevImage {
    let (cells, discarded) = accumulate(clouds.iter().flat_map(|c| c.points.iter()), cfg);
    assemble(cells, discarded, cfg, |a| a.max - a.min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::ProjectionConfig;

    fn kitti_like() -> ProjectionConfig {
        let mut c = ProjectionConfig::kitti();
        c.bev.z_min = -4.0;
        c
    }

    fn pts(v: &[[f32; 3]]) -> PointCloud {
        PointCloud::new(v.iter().map(|p| Point::new(p[0], p[1], p[2], 0.0)).collect())
    }

    #[test]
    fn origin_point_in_centre_cell() {
        let cfg = kitti_like();
        let img = project_bev(&pts(&[[0.0, 0.0, 1.0]]), &cfg);
        let i = 256 * 512 + 256;
        assert!(img.valid[i]);
        assert_eq!(img.values.data()[i], 1.0);
        assert_eq!(img.valid.iter().filter(|v| **v).count(), 1);
    }

    #[test]
    fn upper_bound_is_exclusive() {
        let cfg = kitti_like();
        let img = project_bev(&pts(&[[50.0, 0.0, 0.0], [0.0, 0.0, 2.5]]), &cfg);
        assert_eq!(img.discarded, 2);
        assert!(img.valid.iter().all(|v| !v));
    }

    #[test]
    fn max_height_per_cell() {
        let cfg = kitti_like();
        let img = project_bev(&pts(&[[1.0, 1.0, 0.2], [1.01, 1.01, 1.7]]), &cfg);
        let (r, c) = bev_cell_of(&Point::new(1.0, 1.0, 0.2, 0.0), &cfg).unwrap();
        let i = r * 512 + c;
        assert_eq!(img.values.data()[i], 1.7);
        assert_eq!(img.point_index[i], Some(1));
        assert_eq!(img.counts[i], 2);
    }

    #[test]
    fn stacked_extent() {
        let cfg = kitti_like();
        let a = pts(&[[1.0, 1.0, 0.2]]);
        let b = pts(&[[1.0, 1.0, 1.0]]);
        let c = pts(&[[1.0, 1.0, 1.7]]);
        let single = stacked_bev(&[&a], &cfg);
        let (r, col) = bev_cell_of(&a.points[0], &cfg).unwrap();
        let i = r * 512 + col;
        assert!(single.valid[i]);
        assert_eq!(single.values.data()[i], 0.0);
        let all = stacked_bev(&[&a, &b, &c], &cfg);
        assert!((all.values.data()[i] - 1.5).abs() < 1e-6);
        let perm = stacked_bev(&[&c, &a, &b], &cfg);
        assert_eq!(all.values, perm.values);
        assert_eq!(all.valid, perm.valid);
    }

    #[test]
    fn counts_plus_discarded_is_total() {
        let cfg = ProjectionConfig::desk();
        let cloud = pts(&[[0.0, 0.0, 0.0], [30.0, 0.0, 0.0], [3.0, -4.0, -1.0], [3.0, -4.0, -1.2], [-25.5, -25.5, 0.0]]);
        let img = project_bev(&cloud, &cfg);
        let counted: u32 = img.counts.iter().sum();
        assert_eq!(counted as usize + img.discarded, cloud.len());
        assert_eq!(img.discarded, 1);
    }
}
