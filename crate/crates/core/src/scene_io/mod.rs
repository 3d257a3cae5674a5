//! Reading scenes and writing results.

pub mod camera;
pub mod manifest;
pub mod pfm;
pub mod points;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use camera::{downsample_coord, CameraMode, CameraModel};
pub use manifest::{downsample_grid, load_multiview, LoadOptions, MultiViewSet, View};
pub use pfm::{read_pfm, write_depth, write_pfm};
pub use points::{load_points, write_points, LoadedPoints, PointSet, ScenePoint};

/// Writes `name=value` lines in the given order.
pub fn write_metrics(path: &Path, entries: &[(String, f64)]) -> Result<()> {
    let mut text = String::new();
    for (name, value) in entries {
        text.push_str(&format!("{name}={value:?}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
