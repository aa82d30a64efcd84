use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};

use super::PointCloud;
use crate::error::{Error, Result};

/// Rigid transform mapping points from a local frame into a parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validating constructor: `R` must be orthonormal with determinant 1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > 1e-6 || (det - 1.0).abs() > 1e-6 || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "not a rigid transform (orthogonality error {ortho:e}, det {det})"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation `t`.
    pub fn from_yaw_translation(yaw: f64, t: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::from(t),
        }
    }

    /// Builds a pose from a row-major 3x4 matrix, projecting the rotation
    /// block onto the nearest rotation to absorb text rounding.
    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Self> {
        let m = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vector3::new(v[3], v[7], v[11]);
        Pose::new(nearest_rotation(&m)?, t)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let (r, t) = (&self.rotation, &self.translation);
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into();
        Pose::new(nearest_rotation(&r)?, t)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * vt;
    }
    if (r - m).abs().max() > 1e-3 {
        return Err(Error::invalid("rotation block is far from orthonormal"));
    }
    Ok(r)
}

fn parse_numbers(line: &str, path: &Path, lineno: usize) -> Result<[f64; 12]> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::malformed(path, format!("line {lineno}: {e}")))?;
    <[f64; 12]>::try_from(vals.as_slice()).map_err(|_| {
        Error::malformed(path, format!("line {lineno}: expected 12 numbers, got {}", vals.len()))
    })
}

/// Reads the `Tr:` line of a KITTI `calib.txt` (LiDAR to camera).
pub fn read_calib_tr(path: impl AsRef<Path>) -> Result<Matrix4<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim_start().strip_prefix("Tr:") {
            let v = parse_numbers(rest, path, i + 1)?;
            let mut m = Matrix4::identity();
            for r in 0..3 {
                for c in 0..4 {
                    m[(r, c)] = v[r * 4 + c];
                }
            }
            return Ok(m);
        }
    }
    Err(Error::malformed(path, "no `Tr:` line"))
}

/// Reads `poses.txt`. With a calibration, camera-frame poses `P` are
/// converted to the sensor frame as `Tr⁻¹ · P · Tr`.
pub fn read_poses(path: impl AsRef<Path>, calib: Option<&Matrix4<f64>>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tr_inv = match calib {
        Some(tr) => Some(
            tr.try_inverse()
                .filter(|m| m.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::invalid("calibration transform is not invertible"))?,
        ),
        None => None,
    };
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_numbers(line, path, i + 1)?;
        let pose = match (calib, &tr_inv) {
            (Some(tr), Some(tr_inv)) => {
                let mut p = Matrix4::identity();
                for r in 0..3 {
                    for c in 0..4 {
                        p[(r, c)] = v[r * 4 + c];
                    }
                }
                Pose::from_matrix(&(tr_inv * p * tr))
            }
            _ => Pose::from_row_major_3x4(&v),
        }
        .map_err(|e| Error::malformed(path, format!("line {}: {e}", i + 1)))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:.9e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Re-expresses a cloud captured at `pose_src` in the frame of `pose_dst`.
pub fn transform_to_frame(cloud: &PointCloud, pose_src: &Pose, pose_dst: &Pose) -> PointCloud {
    let rel = pose_dst.inverse().compose(pose_src);
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let q = rel.apply(Vector3::new(p.x as f64, p.y as f64, p.z as f64));
            super::Point::new(q.x as f32, q.y as f32, q.z as f32, p.intensity)
        })
        .collect();
    PointCloud {
        points,
        labels: cloud.labels.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::Point;
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn identity_and_translation_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "poses.txt",
            "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 4.5 0 1 0 -2 0 0 1 0.25\n",
        );
        let poses = read_poses(&p, None).unwrap();
        assert_eq!(poses[0], Pose::identity());
        assert_eq!(poses[1].rotation, Matrix3::identity());
        assert_eq!(poses[1].translation, Vector3::new(4.5, -2.0, 0.25));
    }

    #[test]
    fn malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.txt", "1 0 0 0 0 1 0 0 0 0 1\n");
        assert!(matches!(read_poses(&p, None), Err(Error::Malformed { .. })));
        let p = write(dir.path(), "b.txt", "1 0 0 0 0 1 0 0 0 0 1 x\n");
        assert!(read_poses(&p, None).is_err());
    }

    #[test]
    fn calibration_conjugates() {
        let dir = tempfile::tempdir().unwrap();
        // KITTI-like Tr: LiDAR x forward -> camera z forward.
        let calib = write(
            dir.path(),
            "calib.txt",
            "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: 0 -1 0 0.1 0 0 -1 -0.05 1 0 0 -0.3\n",
        );
        let tr = read_calib_tr(&calib).unwrap();
        // Camera moves 2 m along its optical axis (z) = LiDAR x.
        let poses = write(dir.path(), "poses.txt", "1 0 0 0 0 1 0 0 0 0 1 2\n");
        let p = read_poses(&poses, Some(&tr)).unwrap();
        assert!((p[0].translation - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((p[0].rotation - Matrix3::identity()).norm() < 1e-12);

        let singular = Matrix4::zeros();
        assert!(read_poses(&poses, Some(&singular)).is_err());
    }

    #[test]
    fn write_read_poses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let poses = vec![
            Pose::identity(),
            Pose::from_yaw_translation(0.3, [1.0, -2.0, 0.5]),
        ];
        write_poses(&path, &poses).unwrap();
        let back = read_poses(&path, None).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.to_matrix() - b.to_matrix()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn same_pose_is_identity_transform() {
        let c = PointCloud::with_labels(vec![Point::new(1.0, 2.0, 3.0, 0.4)], vec![40]).unwrap();
        let p = Pose::from_yaw_translation(0.7, [3.0, 1.0, 0.0]);
        let out = transform_to_frame(&c, &p, &p);
        assert!((out.points[0].x - 1.0).abs() < 1e-5);
        assert_eq!(out.labels, c.labels);
        assert_eq!(out.points[0].intensity, 0.4);
    }

    #[test]
    fn pure_translation_shifts_x() {
        let c = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 0.0), Point::new(-4.0, 0.0, 1.0, 0.0)]);
        let out = transform_to_frame(&c, &Pose::from_translation([1.0, 0.0, 0.0]), &Pose::identity());
        assert_eq!(out.points[0].x, 2.0);
        assert_eq!(out.points[1].x, -3.0);
        assert_eq!(out.points[1].y, 0.0);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-3.2f64..3.2, -1.0f64..1.0, -1.0f64..1.0, prop::array::uniform3(-20.0f64..20.0)).prop_map(
            |(yaw, roll, pitch, t)| {
                let r = nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw);
                Pose::new(*r.matrix(), Vector3::from(t)).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(p in arb_pose()) {
            let m = p.compose(&p.inverse()).to_matrix();
            prop_assert!((m - Matrix4::identity()).abs().max() < 1e-9);
        }

        #[test]
        fn transform_is_an_isometry(
            a in arb_pose(),
            b in arb_pose(),
            pts in prop::collection::vec(prop::array::uniform3(-30.0f32..30.0), 2..8),
        ) {
            let cloud = PointCloud::new(pts.iter().map(|p| Point::new(p[0], p[1], p[2], 0.0)).collect());
            let out = transform_to_frame(&cloud, &a, &b);
            // Independent route: explicit homogeneous matrices.
            let rel = b.to_matrix().try_inverse().unwrap() * a.to_matrix();
            for (i, p) in cloud.points.iter().enumerate() {
                let h = rel * nalgebra::Vector4::new(p.x as f64, p.y as f64, p.z as f64, 1.0);
                let q = &out.points[i];
                prop_assert!((h.x - q.x as f64).abs() < 1e-4 && (h.y - q.y as f64).abs() < 1e-4);
                // Pairwise distances under the relative pose, evaluated in f64.
                let rel_pose = b.inverse().compose(&a);
                for other in &cloud.points[..i] {
                    let d0 = (v3(p) - v3(other)).norm();
                    let d1 = (rel_pose.apply(v3(p)) - rel_pose.apply(v3(other))).norm();
                    prop_assert!((d0 - d1).abs() <= 1e-6 * d0);
                }
            }
        }
    }

    fn v3(p: &Point) -> Vector3<f64> {
        Vector3::new(p.x as f64, p.y as f64, p.z as f64)
    }
}
