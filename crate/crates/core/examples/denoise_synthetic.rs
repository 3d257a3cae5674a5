//! Optimises a noisy two-plane light field, supervised and self-supervised,
//! and reports depth error before and after.
//!
//!     cargo run --release --example denoise_synthetic [self|supervised]

use std::time::Instant;

use diffdepth::loss::{metrics, LossConfig, PhotometricLoss};
use diffdepth::optim::{forward, run, Objective, ParamState, PipelineConfig, Schedule};
use diffdepth::synthetic::{generate, SyntheticConfig};

fn main() -> diffdepth::Result<()> {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "supervised".into());
    let scene = generate(&SyntheticConfig::default())?;
    let state = ParamState::initial(scene.points.clone(), &scene.views.central().image);
    let cfg = PipelineConfig::default();
    let before = metrics(&forward(&state, &cfg)?.into_grid(), &scene.gt, &[0.1])?;

    let loss = PhotometricLoss::new(&scene.views, LossConfig::default())?;
    let objective = match mode.as_str() {
        "self" => Objective::Photometric(&loss),
        _ => Objective::Supervised(&scene.gt),
    };
    let t = Instant::now();
    let out = run(state, &objective, &Schedule::default(), &cfg)?;
    let after = metrics(&out.depth, &scene.gt, &[0.1])?;

    println!("mode {mode}, {} iterations in {:.1?}", out.trace.len(), t.elapsed());
    println!("mse     {:.5} -> {:.5}", before.mse, after.mse);
    println!(
        "bp(0.1) {:.2}% -> {:.2}%",
        before.bad_pixels_at(0.1).unwrap(),
        after.bad_pixels_at(0.1).unwrap()
    );
    Ok(())
}
