//! Depth metrics with and without a least-squares scale fit, as used for
//! reconstructions known only up to scale.
//!
//!     cargo run --example evaluate_depth

use diffdepth::loss::{metrics, scale_fit, DEFAULT_BP_THRESHOLDS};
use diffdepth::Grid;

fn main() -> diffdepth::Result<()> {
    let gt = Grid::from_fn(64, 48, |x, y| 2.0 + 0.02 * x as f64 + if y > 24 { 1.0 } else { 0.0 });
    // Right shape, wrong scale, a little noise.
    let est = Grid::from_fn(64, 48, |x, y| 0.8 * gt[(x, y)] + 0.01 * ((x * 7 + y * 3) % 5) as f64);

    for (label, depth) in [("raw", est.clone()), ("scaled", scale_fit(&est, &gt, 500, 10, 7)?.0)] {
        let m = metrics(&depth, &gt, &DEFAULT_BP_THRESHOLDS)?;
        print!("{label:<7} mse {:.5}  q25 {:.4} ", m.mse, m.q25);
        for (t, bp) in &m.bad_pixels {
            print!(" bp({t}) {bp:.1}%");
        }
        println!();
    }
    let (_, s) = scale_fit(&est, &gt, 500, 10, 7)?;
    println!("fitted scale {s:.4} (ideal {:.4})", 1.0 / 0.8);
    Ok(())
}
