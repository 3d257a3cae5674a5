//! Writing and reading depth maps, point files and metrics.
//!
//!     cargo run --example depth_files [dir]

use std::path::PathBuf;

use diffdepth::scene_io::{load_points, read_pfm, write_depth, write_metrics, write_points, PointSet, ScenePoint};
use diffdepth::Grid;

fn main() -> diffdepth::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir).map_err(|e| diffdepth::Error::Config(e.to_string()))?;

    let depth = Grid::from_fn(40, 30, |x, y| 1.0 + (x as f64 * 0.1).sin() * (y as f64 * 0.07).cos());
    let pfm = dir.join("example_depth.pfm");
    write_depth(&depth, &pfm)?;
    let back = read_pfm(&pfm)?;
    // PFM stores 32-bit floats.
    let err = depth.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{}: {}x{}, max round-trip error {err:.1e}", pfm.display(), back.width(), back.height());

    let mut pts = PointSet::default();
    pts.push(ScenePoint::new(3.5, 4.25, 1.5));
    pts.push(ScenePoint { log_weight: 0.7, ..ScenePoint::new(10.0, 2.0, 2.25) });
    let csv = dir.join("example_points.csv");
    write_points(&pts, &csv)?;
    let loaded = load_points(&csv, None)?;
    println!("{}: {} points, identical: {}", csv.display(), loaded.points.len(), loaded.points == pts);

    let metrics = dir.join("example_metrics.txt");
    write_metrics(&metrics, &[("mse".into(), 0.0125), ("bp_0.1".into(), 3.5)])?;
    print!("{}:\n{}", metrics.display(), std::fs::read_to_string(&metrics).unwrap_or_default());
    Ok(())
}
