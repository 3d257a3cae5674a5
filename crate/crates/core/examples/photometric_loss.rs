//! Scores constant-disparity hypotheses against a fronto-parallel light
//! field: the reprojection error bottoms out at the true disparity.
//!
//!     cargo run --release --example photometric_loss

use diffdepth::loss::{warp, LossConfig, PhotometricLoss};
use diffdepth::synthetic::{generate, SceneKind, SyntheticConfig};
use diffdepth::Grid;

fn main() -> diffdepth::Result<()> {
    let truth = 1.25;
    let scene = generate(&SyntheticConfig {
        kind: SceneKind::FrontoParallel,
        background: truth,
        width: 64,
        height: 48,
        ..SyntheticConfig::default()
    })?;
    let loss = PhotometricLoss::new(&scene.views, LossConfig::default())?;
    println!("disparity  E_theta    E_ssim     total");
    for i in 0..=10 {
        let d = 0.75 + 0.1 * i as f64;
        let b = loss.evaluate(&Grid::new(64, 48, d))?;
        println!("{d:<10.2} {:<10.3} {:<10.3} {:.3}", b.e_theta, b.e_ssim, b.total);
    }

    let right = &scene.views.views()[5];
    let r = warp(right, &Grid::new(64, 48, truth), &scene.views.central().camera);
    let valid = r.mask.as_slice().iter().filter(|&&m| m == 1.0).count();
    println!("\n{} -> central: {valid} of {} pixels valid", right.name, 64 * 48);
    Ok(())
}
