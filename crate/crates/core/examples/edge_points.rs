//! The dense-point recipe: diffuse a preliminary map, tune the smoothness
//! field, add points along strong colour edges, then optimise everything.
//!
//!     cargo run --release --example edge_points

use diffdepth::loss::{metrics, LossConfig, PhotometricLoss};
use diffdepth::optim::{augment_points, forward, run, Group, Objective, ParamState, PipelineConfig, Schedule};
use diffdepth::synthetic::{generate, SyntheticConfig};

fn main() -> diffdepth::Result<()> {
    let scene = generate(&SyntheticConfig {
        width: 64,
        height: 64,
        n_points: 150,
        outliers: 0.1,
        ..SyntheticConfig::default()
    })?;
    let image = &scene.views.central().image;
    let loss = PhotometricLoss::new(&scene.views, LossConfig::default())?;
    let objective = Objective::Photometric(&loss);
    let cfg = PipelineConfig::default();
    let report = |label: &str, d: &diffdepth::Grid| -> diffdepth::Result<()> {
        let m = metrics(d, &scene.gt, &[0.1])?;
        println!("{label:<22} mse {:.4}  bp(0.1) {:.1}%", m.mse, m.bad_pixels_at(0.1).unwrap());
        Ok(())
    };

    let state = ParamState::initial(scene.points.clone(), image);
    report("initial diffusion", &forward(&state, &cfg)?.into_grid())?;

    let smooth_only = Schedule {
        groups: vec![Group::Q],
        iters_per_group: 50,
        passes: 1,
        ..Schedule::default()
    };
    let pre = run(state, &objective, &smooth_only, &cfg)?;
    report("after smoothness", &pre.depth)?;

    let mut state = pre.state;
    let added = augment_points(&mut state, &pre.depth, image, 0.9)?;
    println!("added {added} edge points ({} total)", state.points.len());

    let out = run(state, &objective, &Schedule::default(), &cfg)?;
    report("after full schedule", &out.depth)?;
    Ok(())
}
