//! Reverse-mode gradients through splatting, the diffusion solve and the
//! photometric loss, checked against central differences.
//!
//!     cargo run --release --example gradients

use diffdepth::loss::{LossConfig, PhotometricLoss};
use diffdepth::optim::{forward_backward, Group, Objective, ParamState, PipelineConfig};
use diffdepth::synthetic::{generate, SyntheticConfig};

fn main() -> diffdepth::Result<()> {
    let scene = generate(&SyntheticConfig {
        width: 32,
        height: 24,
        n_points: 60,
        ..SyntheticConfig::default()
    })?;
    let loss = PhotometricLoss::new(&scene.views, LossConfig::default())?;
    let objective = Objective::Photometric(&loss);
    let mut cfg = PipelineConfig::default();
    cfg.solver.tol = 1e-12;

    let state = ParamState::initial(scene.points.clone(), &scene.views.central().image);
    let (b, grads, _) = forward_backward(&state, &objective, &cfg)?;
    println!(
        "E_theta {:.4}  E_s {:.4}  E_ssim {:.4}  reward {:.4}  total {:.4}",
        b.e_theta, b.e_s, b.e_ssim, b.grad_reward, b.total
    );

    let h = 1e-5;
    println!("\npoint 0         analytic       finite diff");
    for (name, g, k) in [("Z", Group::Z, 0), ("x", Group::XY, 0), ("y", Group::XY, 1), ("R", Group::R, 0)] {
        let bump = |delta: f64| -> diffdepth::Result<f64> {
            let mut s = state.clone();
            let p = &mut s.points[0];
            match (g, k) {
                (Group::Z, _) => p.z += delta,
                (Group::XY, 0) => p.x += delta,
                (Group::XY, _) => p.y += delta,
                _ => p.log_weight += delta,
            }
            Ok(forward_backward(&s, &objective, &cfg)?.0.total)
        };
        let fd = (bump(h)? - bump(-h)?) / (2.0 * h);
        let an = grads.get(g)[k];
        println!("  d/d{name:<10} {an:>+14.6e} {fd:>+14.6e}");
    }
    let q = grads.q.as_slice();
    let strongest = (0..q.len()).max_by(|&a, &b| q[a].abs().total_cmp(&q[b].abs())).unwrap();
    println!("largest |dL/dQ| at pixel {strongest}: {:+.3e}", q[strongest]);
    Ok(())
}
