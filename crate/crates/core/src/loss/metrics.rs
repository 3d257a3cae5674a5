use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Bad-pixel thresholds reported by default.
pub const DEFAULT_BP_THRESHOLDS: [f64; 6] = [0.01, 0.03, 0.07, 0.1, 0.3, 0.7];

fn check_shapes(a: &Grid, b: &Grid) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "depth is {}x{}, ground truth is {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

/// Mean squared error against ground truth and its gradient.
pub fn supervised_loss(depth: &Grid, gt: &Grid) -> Result<(f64, Grid)> {
    check_shapes(depth, gt)?;
    let n = depth.len() as f64;
    let diff: Vec<f64> = depth.as_slice().iter().zip(gt.as_slice()).map(|(d, g)| d - g).collect();
    let sq: Vec<f64> = diff.iter().map(|d| d * d).collect();
    let loss = crate::reduce::sum(&sq) / n;
    let grad = Grid::from_vec(depth.width(), depth.height(), diff.iter().map(|d| 2.0 * d / n).collect())?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    /// `(threshold, percent of pixels with |error| > threshold)`.
    pub bad_pixels: Vec<(f64, f64)>,
    /// 25th percentile of the absolute error.
    pub q25: f64,
}

impl Metrics {
    pub fn bad_pixels_at(&self, t: f64) -> Option<f64> {
        self.bad_pixels.iter().find(|(th, _)| *th == t).map(|(_, v)| *v)
    }

    /// `name=value` pairs, e.g. `bp_0.07`.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![("mse".to_string(), self.mse)];
        out.extend(self.bad_pixels.iter().map(|(t, v)| (format!("bp_{t}"), *v)));
        out.push(("q25".to_string(), self.q25));
        out
    }
}

/// Linear-interpolated quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Error statistics of `depth` against `gt` over pixels where both are
/// finite.
pub fn metrics(depth: &Grid, gt: &Grid, thresholds: &[f64]) -> Result<Metrics> {
    check_shapes(depth, gt)?;
    let mut errs: Vec<f64> = depth
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .filter(|(d, g)| d.is_finite() && g.is_finite())
        .map(|(d, g)| (d - g).abs())
        .collect();
    if errs.is_empty() {
        return Err(Error::DimensionMismatch("no valid pixels to compare".into()));
    }
    let n = errs.len() as f64;
    let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
    let mse = crate::reduce::sum(&sq) / n;
    let bad_pixels = thresholds
        .iter()
        .map(|&t| (t, 100.0 * errs.iter().filter(|&&e| e > t).count() as f64 / n))
        .collect();
    errs.sort_by(f64::total_cmp);
    Ok(Metrics {
        mse,
        bad_pixels,
        q25: quantile_sorted(&errs, 0.25),
    })
}

/// Scale-only least-squares fit of `depth` to `gt`, for methods whose output
/// is known only up to scale. Each of `n_fits` seeded draws of `n_samples`
/// valid pixels gives a closed-form scale; the one with the lowest full-image
/// MSE wins. Returns the scaled map and the scale.
pub fn scale_fit(
    depth: &Grid,
    gt: &Grid,
    n_samples: usize,
    n_fits: usize,
    seed: u64,
) -> Result<(Grid, f64)> {
    check_shapes(depth, gt)?;
    let valid: Vec<usize> = (0..depth.len())
        .filter(|&i| depth.as_slice()[i].is_finite() && gt.as_slice()[i].is_finite())
        .collect();
    if valid.is_empty() {
        return Err(Error::DimensionMismatch("no valid pixels to fit".into()));
    }
    let (d, g) = (depth.as_slice(), gt.as_slice());
    let mse = |s: f64| valid.iter().map(|&i| (s * d[i] - g[i]).powi(2)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n_samples.min(valid.len());
    let mut best = (f64::INFINITY, 1.0);
    for _ in 0..n_fits.max(1) {
        let (mut num, mut den) = (0.0, 0.0);
        for j in sample(&mut rng, valid.len(), k) {
            let i = valid[j];
            num += d[i] * g[i];
            den += d[i] * d[i];
        }
        let s = if den > 0.0 { num / den } else { 1.0 };
        let e = mse(s);
        if e < best.0 {
            best = (e, s);
        }
    }
    Ok((depth.map(|v| v * best.1), best.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_depth_has_zero_error() {
        let g = Grid::from_fn(5, 4, |x, y| (x + y) as f64);
        let m = metrics(&g, &g, &DEFAULT_BP_THRESHOLDS).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.q25, 0.0);
        assert!(m.bad_pixels.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn bad_pixel_percentage() {
        let gt = Grid::zeros(10, 1);
        let mut d = Grid::zeros(10, 1);
        for x in [1, 4, 7] {
            d[(x, 0)] = 0.2;
        }
        let m = metrics(&d, &gt, &[0.1]).unwrap();
        assert!((m.bad_pixels_at(0.1).unwrap() - 30.0).abs() < 1e-12);
        assert!((m.mse - 3.0 * 0.04 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn q25_interpolates() {
        // |err| sorted: 0, 1, 2, 3, 4 -> position 1.0 -> 1
        let gt = Grid::zeros(5, 1);
        let d = Grid::from_vec(5, 1, vec![3.0, -1.0, 0.0, 4.0, 2.0]).unwrap();
        assert_eq!(metrics(&d, &gt, &[]).unwrap().q25, 1.0);
        // six values: position 1.25
        let gt = Grid::zeros(6, 1);
        let d = Grid::from_vec(6, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(metrics(&d, &gt, &[]).unwrap().q25, 1.25);
    }

    #[test]
    fn supervised_gradient_is_scaled_difference() {
        let gt = Grid::new(2, 2, 1.0);
        let d = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 1.0]).unwrap();
        let (l, g) = supervised_loss(&d, &gt).unwrap();
        assert_eq!(l, (1.0 + 4.0) / 4.0);
        assert_eq!(g.as_slice(), &[0.0, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn scale_fit_recovers_scale() {
        let gt = Grid::from_fn(30, 30, |x, y| 1.0 + (x * y) as f64 * 0.01);
        let d = gt.map(|v| v / 3.0);
        let (fit, s) = scale_fit(&d, &gt, 500, 10, 1).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
        assert!(fit.as_slice().iter().zip(gt.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
