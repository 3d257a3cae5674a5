//! Edge-aware post-processing of depth maps.

use crate::error::{Error, Result};
use crate::grid::{Grid, Image};

/// Default colour bandwidth of [`weighted_median`].
pub const DEFAULT_COLOR_SIGMA: f64 = 0.1;

/// 3×3 weighted median; neighbours are weighted by colour similarity to the
/// centre pixel, `exp(-|I_q - I_p|² / 2σ²)`. Windows are clipped at borders.
pub fn weighted_median(depth: &Grid, guide: &Image, color_sigma: f64) -> Result<Grid> {
    if depth.width() != guide.width() || depth.height() != guide.height() {
        return Err(Error::DimensionMismatch(format!(
            "depth is {}x{}, guide image is {}x{}",
            depth.width(),
            depth.height(),
            guide.width(),
            guide.height()
        )));
    }
    if !(color_sigma > 0.0) {
        return Err(Error::Config("colour sigma must be positive".into()));
    }
    let (w, h) = (depth.width(), depth.height());
    let inv = 1.0 / (2.0 * color_sigma * color_sigma);
    Ok(Grid::from_fn(w, h, |x, y| {
        let centre = guide.pixel(x, y);
        let mut cand: Vec<(f64, f64)> = Vec::with_capacity(9);
        for qy in y.saturating_sub(1)..(y + 2).min(h) {
            for qx in x.saturating_sub(1)..(x + 2).min(w) {
                let d2: f64 = guide
                    .pixel(qx, qy)
                    .iter()
                    .zip(centre)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                cand.push((depth[(qx, qy)], (-d2 * inv).exp()));
            }
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0));
        let half = 0.5 * cand.iter().map(|c| c.1).sum::<f64>();
        let mut acc = 0.0;
        for &(v, wt) in &cand {
            acc += wt;
            if acc >= half {
                return v;
            }
        }
        cand[cand.len() - 1].0
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removes_isolated_spike_and_keeps_constant() {
        let img = Image::new(5, 5, 3);
        let mut d = Grid::new(5, 5, 1.0);
        d[(2, 2)] = 9.0;
        let f = weighted_median(&d, &img, DEFAULT_COLOR_SIGMA).unwrap();
        assert!(f.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn preserves_edges_that_follow_the_image() {
        let img = Image::from_fn(6, 4, 1, |x, _, _| if x < 3 { 0.0 } else { 1.0 });
        let d = Grid::from_fn(6, 4, |x, _| if x < 3 { 0.5 } else { 2.0 });
        let f = weighted_median(&d, &img, DEFAULT_COLOR_SIGMA).unwrap();
        assert_eq!(f, d);
    }

    #[test]
    fn rejects_mismatched_guide() {
        assert!(weighted_median(&Grid::zeros(3, 3), &Image::new(4, 3, 1), 0.1).is_err());
    }
}
