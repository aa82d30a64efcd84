use super::{bev_cell_of, rv_pixel, BevImage, ProjectionConfig, RangeImage};
use crate::error::{Error, Result};
use crate::io::PointCloud;
use crate::tensor::Tensor;

/// Range-view sampling location for one BEV cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R2bEntry {
    /// Column coordinate in [-1, 1]; -1 is the first pixel centre, +1 the last.
    pub u: f64,
    /// Row coordinate in [-1, 1].
    pub v: f64,
    /// The point that ties the two views together.
    pub point: u32,
}

/// Pixel-level correspondence between the BEV grid and the range image.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewCorrespondence {
    pub bev_height: usize,
    pub bev_width: usize,
    pub rv_height: usize,
    pub rv_width: usize,
    /// Per BEV cell (row-major).
    pub r2b: Vec<Option<R2bEntry>>,
    /// Per range-view pixel: flat BEV cell of the pixel's point.
    pub b2r: Vec<Option<usize>>,
}

fn normalize(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

fn denormalize(c: f64, n: usize) -> f64 {
    let x = (c + 1.0) * 0.5 * (n.saturating_sub(1)) as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// Links each populated BEV cell to the range-view pixel of the point that
/// defines it, and each populated range-view pixel to its point's BEV cell.
pub fn build_correspondence(
    cloud: &PointCloud,
    range: &RangeImage,
    bev: &BevImage,
    cfg: &ProjectionConfig,
) -> ViewCorrespondence {
    let (rh, rw) = (range.height(), range.width());
    let r2b = bev
        .point_index
        .iter()
        .map(|pi| {
            let idx = (*pi)?;
            let (u, v) = rv_pixel(&cloud.points[idx as usize], cfg)?;
            Some(R2bEntry {
                u: normalize(u, rw),
                v: normalize(v, rh),
                point: idx,
            })
        })
        .collect();
    let b2r = range
        .point_index
        .iter()
        .map(|pi| {
            let (r, c) = bev_cell_of(&cloud.points[(*pi)? as usize], cfg)?;
            Some(r * bev.width() + c)
        })
        .collect();
    ViewCorrespondence {
        bev_height: bev.height(),
        bev_width: bev.width(),
        rv_height: rh,
        rv_width: rw,
        r2b,
        b2r,
    }
}

impl ViewCorrespondence {
    pub fn populated(&self) -> usize {
        self.r2b.iter().filter(|e| e.is_some()).count()
    }

    /// Coarser BEV grid (extents divided by `factor`). Each coarse cell takes
    /// the first populated fine cell of its block in raster order; the
    /// normalized coordinates carry over unchanged.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.bev_height.is_multiple_of(factor) || !self.bev_width.is_multiple_of(factor) {
            return Err(Error::shape(format!(
                "cannot downsample {}x{} by {factor}",
                self.bev_height, self.bev_width
            )));
        }
        let (h, w) = (self.bev_height / factor, self.bev_width / factor);
        let mut r2b = vec![None; h * w];
        for (i, slot) in r2b.iter_mut().enumerate() {
            let (r, c) = (i / w, i % w);
            *slot = (0..factor)
                .flat_map(|dy| (0..factor).map(move |dx| (dy, dx)))
                .find_map(|(dy, dx)| {
                    self.r2b[(r * factor + dy) * self.bev_width + c * factor + dx]
                });
        }
        let b2r = self
            .b2r
            .iter()
            .map(|cell| cell.map(|i| (i / self.bev_width / factor) * w + (i % self.bev_width) / factor))
            .collect();
        Ok(ViewCorrespondence {
            bev_height: h,
            bev_width: w,
            rv_height: self.rv_height,
            rv_width: self.rv_width,
            r2b,
            b2r,
        })
    }
}

/// Resamples range-view features (C, h, w) onto the BEV grid of `corr`
/// with bilinear interpolation; the column axis wraps. Cells without a
/// correspondence are 0. `rv_feat` may be any pyramid level whose aspect
/// ratio matches the full-resolution range image.
pub fn grid_sample_r2b(
    rv_feat: &Tensor,
    corr: &ViewCorrespondence,
    target: (usize, usize),
) -> Result<Tensor> {
    let (c, h, w) = rv_feat.dims3()?;
    if target != (corr.bev_height, corr.bev_width) {
        return Err(Error::shape(format!(
            "target {target:?} vs correspondence grid {}x{}",
            corr.bev_height, corr.bev_width
        )));
    }
    if h * corr.rv_width != w * corr.rv_height || h == 0 {
        return Err(Error::shape(format!(
            "feature map {h}x{w} is not a scaled {}x{} range image",
            corr.rv_height, corr.rv_width
        )));
    }
    let plane = target.0 * target.1;
    let src = rv_feat.data();
    let mut out = vec![0.0f32; c * plane];
    for (cell, e) in corr.r2b.iter().enumerate() {
        let Some(e) = e else { continue };
        let x = denormalize(e.u, w);
        let y = denormalize(e.v, h);
        let x0 = (x.floor() as usize).min(w - 1);
        let y0 = (y.floor() as usize).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1) % w;
        let y1 = (y0 + 1).min(h - 1);
        for ci in 0..c {
            let p = &src[ci * h * w..(ci + 1) * h * w];
            let at = |yy: usize, xx: usize| p[yy * w + xx] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out[ci * plane + cell] = (top * (1.0 - fy) + bot * fy) as f32;
        }
    }
    Tensor::from_parts(vec![c, target.0, target.1], out, "grid_sample_r2b")
}
