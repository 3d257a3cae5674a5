//! Measures the reprojection error in a custom feature space. Here the
//! features are horizontal and vertical intensity gradients, which ignore
//! a global brightness change between views.
//!
//!     cargo run --release --example feature_hook

use diffdepth::loss::{FeatureTransform, LossConfig, PhotometricLoss};
use diffdepth::scene_io::{MultiViewSet, View};
use diffdepth::synthetic::{generate, SceneKind, SyntheticConfig};
use diffdepth::{Grid, Image};

struct Gradients;

impl FeatureTransform for Gradients {
    fn apply(&self, image: &Image) -> Image {
        let g = image.channel_mean();
        let (w, h) = (g.width(), g.height());
        Image::from_fn(w, h, 2, |x, y, c| {
            if c == 0 {
                g[((x + 1).min(w - 1), y)] - g[(x, y)]
            } else {
                g[(x, (y + 1).min(h - 1))] - g[(x, y)]
            }
        })
    }
}

fn main() -> diffdepth::Result<()> {
    let truth = 1.0;
    let scene = generate(&SyntheticConfig {
        kind: SceneKind::FrontoParallel,
        background: truth,
        width: 48,
        height: 48,
        ..SyntheticConfig::default()
    })?;
    // Brighten every non-central view by 0.1.
    let c = scene.views.central_index();
    let views: Vec<View> = scene
        .views
        .views()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut v = v.clone();
            if i != c {
                v.image.as_mut_slice().iter_mut().for_each(|p| *p += 0.1);
            }
            v
        })
        .collect();
    let set = MultiViewSet::new(views, c)?;

    let rgb = PhotometricLoss::new(&set, LossConfig::default())?;
    let grad = PhotometricLoss::with_transform(&set, LossConfig::default(), &Gradients)?;
    println!("disparity  E_theta(rgb)  E_theta(gradients)");
    for d in [0.6, 0.8, 1.0, 1.2, 1.4] {
        let depth = Grid::new(48, 48, d);
        println!("{d:<10} {:<13.3} {:.3}", rgb.evaluate(&depth)?.e_theta, grad.evaluate(&depth)?.e_theta);
    }
    Ok(())
}
