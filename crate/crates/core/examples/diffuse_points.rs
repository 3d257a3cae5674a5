//! Splats a sparse point set and diffuses it into a dense depth map,
//! comparing the hierarchical-basis and Jacobi preconditioners.
//!
//!     cargo run --release --example diffuse_points [out.pfm]

use std::time::Instant;

use diffdepth::diffusion::{assemble, Preconditioner, SmoothnessField, SolverConfig};
use diffdepth::loss::metrics;
use diffdepth::scene_io::write_depth;
use diffdepth::splat::{render, SplatConfig};
use diffdepth::synthetic::{generate, SyntheticConfig};

fn main() -> diffdepth::Result<()> {
    let scene = generate(&SyntheticConfig {
        width: 256,
        height: 192,
        n_points: 2000,
        outliers: 0.0,
        ..SyntheticConfig::default()
    })?;
    let (w, h) = (scene.views.width(), scene.views.height());
    let images = render(&scene.points, w, h, &SplatConfig::default())?;
    // Edge-aware smoothness from the colour gradient.
    let smooth = SmoothnessField::from_image(&scene.views.central().image);
    let sys = assemble(&images, &smooth)?;

    for pre in [Preconditioner::HierarchicalBasis, Preconditioner::Jacobi] {
        let cfg = SolverConfig {
            preconditioner: pre,
            ..SolverConfig::default()
        };
        let t = Instant::now();
        let (_, stats) = sys.solve_rhs(sys.rhs(), &cfg)?;
        println!(
            "{pre:?}: {} iterations, residual {:.1e}, {:.1?}",
            stats.iterations,
            stats.residual,
            t.elapsed()
        );
    }

    let depth = sys.solve(&SolverConfig::default())?;
    let m = metrics(&depth, &scene.gt, &[0.1])?;
    println!("mse {:.5}, bp(0.1) {:.2}%", m.mse, m.bad_pixels_at(0.1).unwrap());
    if let Some(path) = std::env::args().nth(1) {
        write_depth(&depth, path.as_ref())?;
        println!("wrote {path} and its PNG preview");
    }
    Ok(())
}
