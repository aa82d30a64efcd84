use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn range(&self) -> f64 {
        let (x, y, z) = (self.x as f64, self.y as f64, self.z as f64);
        (x * x + y * y + z * z).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// Raw per-point class ids, one per point when present.
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud { points, labels: None }
    }

    pub fn with_labels(points: Vec<Point>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::shape(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        Ok(PointCloud {
            points,
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Reads consecutive little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn read_point_cloud_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::malformed(
            path,
            format!("{} bytes is not a multiple of 16", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if ![p.x, p.y, p.z].iter().all(|v| v.is_finite()) {
            return Err(Error::malformed(path, "non-finite coordinate"));
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

pub fn write_point_cloud_bin(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&p, &bytes).unwrap();
        let c = read_point_cloud_bin(&p).unwrap();
        assert_eq!(c.points, vec![Point::new(1.0, 2.0, 3.0, 0.5)]);

        bytes.push(0);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_point_cloud_bin(&p), Err(Error::Malformed { .. })));
    }

    #[test]
    fn empty_file_is_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        std::fs::write(&p, []).unwrap();
        assert!(read_point_cloud_bin(&p).unwrap().is_empty());
        assert!(read_point_cloud_bin(dir.path().join("missing.bin")).is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let c = PointCloud::new(vec![Point::new(-1.5, 0.25, 7.0, 1.0), Point::new(0.0, 0.0, 0.0, 0.0)]);
        write_point_cloud_bin(&p, &c).unwrap();
        assert_eq!(read_point_cloud_bin(&p).unwrap(), c);
    }
}
