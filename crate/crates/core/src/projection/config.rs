use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Kitti,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "kitti" => Ok(Profile::Kitti),
            other => Err(Error::invalid(format!("unknown profile `{other}`"))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Kitti => "kitti",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvConfig {
    pub height: usize,
    pub width: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub max_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevConfig {
    /// Rows, indexed by x.
    pub height: usize,
    /// Columns, indexed by y.
    pub width: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl BevConfig {
    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.x_max - self.x_min) / self.height as f64,
            (self.y_max - self.y_min) / self.width as f64,
        )
    }

    /// World-frame centre of cell (row, col).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (
            self.x_min + (row as f64 + 0.5) * dx,
            self.y_min + (col as f64 + 0.5) * dy,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub profile: Profile,
    pub rv: RvConfig,
    pub bev: BevConfig,
}

impl ProjectionConfig {
    pub fn desk() -> Self {
        ProjectionConfig {
            profile: Profile::Desk,
            rv: RvConfig {
                height: 32,
                width: 512,
                fov_up_deg: 3.0,
                fov_down_deg: -25.0,
                max_range: 50.0,
            },
            bev: BevConfig {
                height: 128,
                width: 128,
                x_min: -25.6,
                x_max: 25.6,
                y_min: -25.6,
                y_max: 25.6,
                z_min: -4.0,
                z_max: 2.0,
            },
        }
    }

    pub fn kitti() -> Self {
        ProjectionConfig {
            profile: Profile::Kitti,
            rv: RvConfig {
                height: 64,
                width: 2048,
                fov_up_deg: 3.0,
                fov_down_deg: -25.0,
                max_range: 80.0,
            },
            bev: BevConfig {
                height: 512,
                width: 512,
                x_min: -50.0,
                x_max: 50.0,
                y_min: -50.0,
                y_max: 50.0,
                z_min: -4.0,
                z_max: 2.0,
            },
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Kitti => Self::kitti(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rv, bev) = (&self.rv, &self.bev);
        if rv.fov_up_deg <= rv.fov_down_deg {
            return Err(Error::invalid("fov_up must exceed fov_down"));
        }
        if bev.x_min >= bev.x_max || bev.y_min >= bev.y_max || bev.z_min >= bev.z_max {
            return Err(Error::invalid("BEV bounds must be ordered"));
        }
        if [rv.height, rv.width, bev.height, bev.width].iter().any(|e| *e < 8) {
            return Err(Error::invalid("image extents must be at least 8"));
        }
        if rv.max_range <= 0.0 {
            return Err(Error::invalid("max_range must be positive"));
        }
        Ok(())
    }
}
