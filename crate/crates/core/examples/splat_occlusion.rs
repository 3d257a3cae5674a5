//! Two points land on the same pixel at different depths. As the depth
//! spread σ_Z shrinks, the nearer point increasingly owns the label.
//!
//!     cargo run --example splat_occlusion

use diffdepth::scene_io::ScenePoint;
use diffdepth::splat::{alpha, render, transmittance_point, SplatConfig};

fn main() -> diffdepth::Result<()> {
    let near = ScenePoint::new(5.0, 5.0, 2.0);
    let far = ScenePoint::new(5.3, 4.8, 6.0);
    println!("sigma_z   rho     T(near)   alpha(near) alpha(far)  label");
    for sigma_z in [2.0, 1.0, 0.5, 0.25] {
        let cfg = SplatConfig {
            sigma_z,
            ..SplatConfig::default()
        };
        let img = render(&[near, far], 11, 11, &cfg)?;
        println!(
            "{sigma_z:<9} {:<7.3} {:<9.2e} {:<11.4} {:<11.4} {:.4}",
            cfg.rho(),
            transmittance_point(&near, 5, 5, &cfg),
            alpha(&near, 5, 5, &[far], &cfg),
            alpha(&far, 5, 5, &[near], &cfg),
            img.labels()[(5, 5)],
        );
    }

    // Footprints: the label spreads wide, the weight stays compact.
    let img = render(&[near], 11, 11, &SplatConfig::default())?;
    println!("\nrow y=5   label    weight");
    for x in 2..=8 {
        println!("x={x}       {:.4}   {:.4}", img.labels()[(x, 5)], img.weights()[(x, 5)]);
    }
    Ok(())
}
