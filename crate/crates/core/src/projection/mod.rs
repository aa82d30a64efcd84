//! 3D to 2D mappings: spherical range view, Cartesian bird's-eye view,
//! multi-frame stacked BEV, and the BEV-to-range-view correspondence used to
//! resample range-view features onto the BEV grid.

mod bev;
mod config;
mod correspondence;
mod range;

pub use bev::{bev_cell_of, project_bev, stacked_bev, BevImage};
pub use config::{BevConfig, Profile, ProjectionConfig, RvConfig};
pub use correspondence::{build_correspondence, grid_sample_r2b, R2bEntry, ViewCorrespondence};
pub use range::{project_range, rv_pixel, RangeImage};
