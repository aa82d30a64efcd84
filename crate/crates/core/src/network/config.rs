use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{Profile, ProjectionConfig};

/// Shape of the MV-MOS graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Channel width per pyramid scale; its length is the scale count S.
    pub widths: Vec<usize>,
    pub classes: usize,
    /// State dimension N_s of the selective scan.
    pub ss2d_state: usize,
    /// Residual channels per view (the window length N).
    pub window: usize,
}

impl NetworkConfig {
    pub fn desk() -> Self {
        NetworkConfig {
            widths: vec![16, 32, 64, 128],
            classes: 3,
            ss2d_state: 8,
            window: 4,
        }
    }

    pub fn kitti() -> Self {
        NetworkConfig {
            widths: vec![32, 64, 128, 256],
            classes: 3,
            ss2d_state: 16,
            window: 8,
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Kitti => Self::kitti(),
        }
    }

    pub fn scales(&self) -> usize {
        self.widths.len()
    }

    /// Channels of the bottleneck output (semantic and motion concatenated).
    pub fn bottleneck_channels(&self) -> usize {
        2 * self.widths[self.scales() - 1]
    }

    /// Checks the graph against itself and against the projection grids.
    pub fn validate(&self, proj: &ProjectionConfig) -> Result<()> {
        let s = self.scales();
        if s < 3 {
            return Err(Error::invalid(format!("need at least 3 scales, got {s}")));
        }
        if self.widths[0] == 0 || self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "widths must be positive and strictly increasing, got {:?}",
                self.widths
            )));
        }
        // pixel_shuffle(2) consumes four channels per output channel.
        if self.widths[1..].iter().any(|w| w % 4 != 0) {
            return Err(Error::invalid(format!(
                "widths above scale 0 must be divisible by 4, got {:?}",
                self.widths
            )));
        }
        if self.classes != 3 || self.ss2d_state == 0 || self.window == 0 {
            return Err(Error::invalid("classes must be 3; ss2d_state and window must be positive"));
        }
        let f = 1usize << (s - 1);
        for (what, h, w) in [
            ("range view", proj.rv.height, proj.rv.width),
            ("BEV", proj.bev.height, proj.bev.width),
        ] {
            if h % f != 0 || w % f != 0 {
                return Err(Error::invalid(format!(
                    "{what} grid {h}x{w} is not divisible by {f} for {s} scales"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        NetworkConfig::desk().validate(&ProjectionConfig::desk()).unwrap();
        NetworkConfig::kitti().validate(&ProjectionConfig::kitti()).unwrap();
    }

    #[test]
    fn rejects_bad_graphs() {
        let p = ProjectionConfig::desk();
        let mut c = NetworkConfig::desk();
        c.widths = vec![16, 32];
        assert!(c.validate(&p).is_err());
        c.widths = vec![16, 32, 32, 64];
        assert!(c.validate(&p).is_err());
        c.widths = vec![16, 32, 64, 128, 256, 512, 1024, 2048];
        assert!(c.validate(&p).is_err());
        c.widths = vec![16, 30, 64];
        assert!(c.validate(&p).is_err());
    }
}
