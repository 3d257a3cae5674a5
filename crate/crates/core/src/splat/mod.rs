//! Differentiable screen-space splatting of sparse depth points.
//!
//! Each point spreads an isotropic Gaussian depth label and a super-Gaussian
//! data weight over a truncated square window of pixels. Labels of points that
//! overlap in screen space are merged by an emission–absorption model along
//! the depth axis: every point carries a density Gaussian of standard
//! deviation `sigma_z` (truncated to ±3σ) and a point's aggregation weight
//! `alpha` is a midpoint quadrature of its emission attenuated by the
//! transmittance of everything in front of each sample.

mod adjoint;
mod render;

pub use adjoint::{render_adjoint, PointGrad};
pub use render::{render, SplatImages};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_io::ScenePoint;

/// Half-width of the depth window in units of `sigma_z`.
pub const DEPTH_WINDOW_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplatConfig {
    /// Std of the label Gaussian, pixels.
    pub sigma_s: f64,
    /// Std of the weight super-Gaussian, pixels.
    pub sigma_lambda: f64,
    /// Super-Gaussian order.
    pub p: u32,
    /// Std of the depth density, label units.
    pub sigma_z: f64,
    /// Quadrature samples per point.
    pub n_samples: usize,
    /// Density magnitude. `None` calibrates it from `sigma_z` and
    /// `n_samples` (see [`calibrate_rho`]).
    pub rho: Option<f64>,
    /// Window size in pixels (odd).
    pub kernel: usize,
    /// Render tile size in pixels; 0 renders the whole image as one tile.
    pub tile: usize,
}

impl Default for SplatConfig {
    fn default() -> Self {
        SplatConfig {
            sigma_s: 1.3,
            sigma_lambda: 0.71,
            p: 2,
            sigma_z: 1.0,
            n_samples: 8,
            rho: None,
            kernel: 7,
            tile: 64,
        }
    }
}

impl SplatConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("sigma_s", self.sigma_s),
            ("sigma_lambda", self.sigma_lambda),
            ("sigma_z", self.sigma_z),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.p < 1 {
            return bad("super-Gaussian order p must be >= 1".into());
        }
        if self.n_samples < 2 {
            return bad(format!("n_samples must be >= 2, got {}", self.n_samples));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return bad(format!("rho must be positive, got {rho}"));
            }
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        // The label must reach three sigma-widths (rounded down to whole
        // pixels) before truncation: 7 for the default sigma_s.
        let min_kernel = 2 * (3.0 * self.sigma_s).floor() as usize + 1;
        if self.kernel < min_kernel {
            return bad(format!(
                "kernel {} too small for sigma_s {} (need >= {min_kernel})",
                self.kernel, self.sigma_s
            ));
        }
        Ok(())
    }

    pub fn half_extent(&self) -> usize {
        self.kernel / 2
    }

    /// The density magnitude in effect.
    pub fn rho(&self) -> f64 {
        self.rho
            .unwrap_or_else(|| calibrate_rho(self.sigma_z, self.n_samples))
    }
}

/// Aggregation weight of an isolated point at its own pixel centre for a
/// density magnitude `u / sigma_z`. Independent of `sigma_z`.
fn isolated_alpha(u: f64, n_samples: usize) -> f64 {
    let q = DepthQuadrature::new(1.0, u, n_samples);
    q.alpha_isolated(1.0)
}

/// Density magnitude for which an isolated point at a pixel centre has
/// `alpha == 1`, so the rendered label equals the point's depth there.
pub fn calibrate_rho(sigma_z: f64, n_samples: usize) -> f64 {
    let f = |u: f64| isolated_alpha(u, n_samples) - 1.0;
    let mut lo = 0.25;
    let mut hi = None;
    for cand in [1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0] {
        if f(cand) >= 0.0 {
            hi = Some(cand);
            break;
        }
        lo = cand;
    }
    let u = match hi {
        Some(mut hi) => {
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if f(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        }
        // Never reaches one: take the most opaque setting on the scan.
        None => (1..=64)
            .map(|i| i as f64 * 0.25)
            .max_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap(),
    };
    u / sigma_z
}

/// Precomputed depth quadrature: sample offsets, emission weights and the
/// truncated cumulative density.
#[derive(Debug, Clone)]
pub(crate) struct DepthQuadrature {
    pub sigma_z: f64,
    pub rho: f64,
    pub ds: f64,
    pub offsets: Vec<f64>,
    pub emission: Vec<f64>,
    window: f64,
    mass_scale: f64,
    erf_window: f64,
}

impl DepthQuadrature {
    pub fn new(sigma_z: f64, rho: f64, n_samples: usize) -> Self {
        let window = DEPTH_WINDOW_SIGMAS * sigma_z;
        let ds = 2.0 * window / n_samples as f64;
        let offsets: Vec<f64> = (0..n_samples)
            .map(|k| -window + (k as f64 + 0.5) * ds)
            .collect();
        let emission = offsets
            .iter()
            .map(|o| (-o * o / (2.0 * sigma_z * sigma_z)).exp())
            .collect();
        DepthQuadrature {
            sigma_z,
            rho,
            ds,
            offsets,
            emission,
            window,
            mass_scale: sigma_z * std::f64::consts::FRAC_PI_2.sqrt(),
            erf_window: libm::erf(DEPTH_WINDOW_SIGMAS / std::f64::consts::SQRT_2),
        }
    }

    /// Integral of the unit-height depth Gaussian from the start of its
    /// window up to offset `d` from its centre.
    pub fn mass(&self, d: f64) -> f64 {
        let d = d.clamp(-self.window, self.window);
        self.mass_scale
            * (libm::erf(d / (self.sigma_z * std::f64::consts::SQRT_2)) + self.erf_window)
    }

    /// Derivative of [`mass`](Self::mass) with respect to `d`.
    pub fn density(&self, d: f64) -> f64 {
        if d.abs() >= self.window {
            0.0
        } else {
            (-d * d / (2.0 * self.sigma_z * self.sigma_z)).exp()
        }
    }

    /// Integral over the whole window.
    pub fn full_mass(&self) -> f64 {
        2.0 * self.mass_scale * self.erf_window
    }

    fn alpha_isolated(&self, g: f64) -> f64 {
        let mut acc = 0.0;
        for (o, e) in self.offsets.iter().zip(&self.emission) {
            acc += e * (-self.rho * g * self.mass(*o)).exp();
        }
        self.rho * self.ds * acc
    }
}

/// Screen-space footprint of one point at one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint {
    pub dx: f64,
    pub dy: f64,
    /// Label Gaussian, unit height.
    pub g: f64,
    /// Weight super-Gaussian, unit height.
    pub h: f64,
}

/// Inclusive pixel window `[x0, x1] × [y0, y1]` (unclipped) covered by a point.
pub(crate) fn window(p: &ScenePoint, half: usize) -> (i64, i64, i64, i64) {
    let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
    let k = half as i64;
    (cx - k, cx + k, cy - k, cy + k)
}

#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub half: usize,
    inv_2s2: f64,
    inv_s2: f64,
    p_inv_2l2: f64,
    p_inv_l2: f64,
    pub depth: DepthQuadrature,
}

impl Kernel {
    pub fn new(cfg: &SplatConfig) -> Self {
        Kernel {
            half: cfg.half_extent(),
            inv_2s2: 1.0 / (2.0 * cfg.sigma_s * cfg.sigma_s),
            inv_s2: 1.0 / (cfg.sigma_s * cfg.sigma_s),
            p_inv_2l2: cfg.p as f64 / (2.0 * cfg.sigma_lambda * cfg.sigma_lambda),
            p_inv_l2: cfg.p as f64 / (cfg.sigma_lambda * cfg.sigma_lambda),
            depth: DepthQuadrature::new(cfg.sigma_z, cfg.rho(), cfg.n_samples),
        }
    }

    pub fn covers(&self, p: &ScenePoint, x: i64, y: i64) -> bool {
        let (x0, x1, y0, y1) = window(p, self.half);
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    pub fn footprint(&self, p: &ScenePoint, x: i64, y: i64) -> Footprint {
        let dx = x as f64 - p.x;
        let dy = y as f64 - p.y;
        let r2 = dx * dx + dy * dy;
        Footprint {
            dx,
            dy,
            g: (-r2 * self.inv_2s2).exp(),
            h: (-r2 * self.p_inv_2l2).exp(),
        }
    }

    /// d g / d(point x) = g · dx / σ_S²
    pub fn dg_scale(&self) -> f64 {
        self.inv_s2
    }

    /// d h / d(point x) = h · p · dx / σ_λ²
    pub fn dh_scale(&self) -> f64 {
        self.p_inv_l2
    }
}

/// Depth label a single point splats at pixel `(x, y)`; zero outside its
/// window.
pub fn label_single(point: &ScenePoint, x: i64, y: i64, cfg: &SplatConfig) -> f64 {
    let k = Kernel::new(cfg);
    if !k.covers(point, x, y) {
        return 0.0;
    }
    point.z * k.footprint(point, x, y).g
}

/// Data weight a single point splats at pixel `(x, y)`; zero outside its
/// window.
pub fn weight_single(point: &ScenePoint, x: i64, y: i64, cfg: &SplatConfig) -> f64 {
    let k = Kernel::new(cfg);
    if !k.covers(point, x, y) {
        return 0.0;
    }
    point.weight() * k.footprint(point, x, y).h
}

/// Fraction of a ray through pixel `(x, y)` that survives passing the whole
/// depth window of `point`.
pub fn transmittance_point(point: &ScenePoint, x: i64, y: i64, cfg: &SplatConfig) -> f64 {
    let k = Kernel::new(cfg);
    if !k.covers(point, x, y) {
        return 1.0;
    }
    let g = k.footprint(point, x, y).g;
    (-k.depth.rho * g * k.depth.full_mass()).exp()
}

/// Aggregation weight of `point` at pixel `(x, y)` given the other points
/// whose windows may cover the pixel.
pub fn alpha(
    point: &ScenePoint,
    x: i64,
    y: i64,
    others: &[ScenePoint],
    cfg: &SplatConfig,
) -> f64 {
    let k = Kernel::new(cfg);
    if !k.covers(point, x, y) {
        return 0.0;
    }
    let mut list: Vec<ScenePoint> = others
        .iter()
        .copied()
        .filter(|o| k.covers(o, x, y))
        .collect();
    list.push(*point);
    let target = (list.len() - 1) as u32;
    let indices: Vec<u32> = (0..list.len() as u32).collect();
    let pix = render::PixelModel::new(&k, &list, &indices, x, y);
    pix.alphas()[pix.position_of(target)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SplatConfig {
        SplatConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
        let mut c = cfg();
        c.kernel = 5;
        assert!(c.validate().is_err());
        c.kernel = 8;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.n_samples = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn label_at_centre_is_depth() {
        let p = ScenePoint::new(5.0, 5.0, 5.0);
        assert_eq!(label_single(&p, 5, 5, &cfg()), 5.0);
    }

    #[test]
    fn label_one_pixel_off() {
        // 5 * exp(-1 / (2 * 1.3^2))
        let p = ScenePoint::new(5.0, 5.0, 5.0);
        let v = label_single(&p, 6, 5, &cfg());
        assert!((v - 3.719_465_310_688_232).abs() < 1e-9, "{v}");
    }

    #[test]
    fn label_and_weight_vanish_outside_window() {
        let p = ScenePoint::new(5.2, 5.0, 5.0);
        assert_eq!(label_single(&p, 9, 5, &cfg()), 0.0);
        assert_eq!(weight_single(&p, 5, 1, &cfg()), 0.0);
        assert!(label_single(&p, 8, 5, &cfg()) > 0.0);
    }

    #[test]
    fn weight_values() {
        let p = ScenePoint::new(3.0, 4.0, 1.0);
        assert_eq!(weight_single(&p, 3, 4, &cfg()), 1.0);
        // exp(-1 / (2 * 0.71^2))^2
        let v = weight_single(&p, 4, 4, &cfg());
        assert!((v - 0.137_554_732_541_247_1).abs() < 1e-12, "{v}");
        let halved = ScenePoint {
            log_weight: std::f64::consts::LN_2,
            ..p
        };
        for (x, y) in [(3, 4), (4, 4), (2, 6)] {
            let a = weight_single(&p, x, y, &cfg());
            let b = weight_single(&halved, x, y, &cfg());
            assert!((b - 0.5 * a).abs() < 1e-15);
        }
    }

    #[test]
    fn transmittance_is_in_unit_interval() {
        let p = ScenePoint::new(3.3, 4.6, 2.0);
        assert_eq!(transmittance_point(&p, 20, 20, &cfg()), 1.0);
        for x in 0..8 {
            for y in 0..8 {
                let t = transmittance_point(&p, x, y, &cfg());
                assert!(t > 0.0 && t <= 1.0);
            }
        }
    }

    #[test]
    fn calibrated_alpha_is_near_one_for_isolated_point() {
        for sz in [0.25, 0.5, 1.0, 2.0] {
            let c = SplatConfig {
                sigma_z: sz,
                ..cfg()
            };
            let p = ScenePoint::new(4.0, 4.0, 3.0);
            let a = alpha(&p, 4, 4, &[], &c);
            assert!((0.9..=1.1).contains(&a), "sigma_z {sz}: alpha {a}");
            assert!((a - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_scales_inversely_with_sigma_z() {
        let a = calibrate_rho(1.0, 8);
        let b = calibrate_rho(0.5, 8);
        assert!((b - 2.0 * a).abs() < 1e-9 * b);
    }

    #[test]
    fn opaque_occluder_hides_point() {
        let c = SplatConfig {
            rho: Some(50.0),
            ..cfg()
        };
        let back = ScenePoint::new(4.0, 4.0, 10.0);
        let front = ScenePoint::new(4.0, 4.0, 2.0);
        let a = alpha(&back, 4, 4, &[front], &c);
        assert!(a < 1e-30, "{a}");
    }

    #[test]
    fn adding_an_occluder_never_increases_alpha() {
        let target = ScenePoint::new(4.3, 3.8, 5.0);
        let mut others = vec![];
        let mut prev = alpha(&target, 4, 4, &others, &cfg());
        for (i, z) in [4.5, 3.0, 1.0, 4.9].iter().enumerate() {
            others.push(ScenePoint::new(4.0 + 0.3 * i as f64, 4.1, *z));
            let a = alpha(&target, 4, 4, &others, &cfg());
            assert!(a <= prev + 1e-15, "{a} > {prev}");
            prev = a;
        }
    }

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = 0.5 * (f(a) + f(b));
        for i in 1..n {
            acc += f(a + i as f64 * h);
        }
        acc * h
    }

    #[test]
    fn transmittance_matches_trapezoid_oracle() {
        let c = cfg();
        let (sz, rho) = (c.sigma_z, c.rho());
        let p = ScenePoint::new(4.0, 4.0, 3.0);
        let integral = trapezoid(|s| (-s * s / (2.0 * sz * sz)).exp(), -3.0 * sz, 3.0 * sz, 10_000);
        let oracle = (-rho * integral).exp();
        let t = transmittance_point(&p, 4, 4, &c);
        assert!(((t - oracle) / oracle).abs() < 1e-6, "{t} vs {oracle}");
    }

    /// Fine ray march along depth through the truncated densities of all
    /// points at one pixel: label = ∫ T(s) Σ ρ g_i e_i(s) Z_i ds.
    fn ray_march_label(points: &[ScenePoint], x: i64, y: i64, c: &SplatConfig) -> f64 {
        let k = Kernel::new(c);
        let (sz, rho) = (c.sigma_z, c.rho());
        let w = 3.0 * sz;
        let lo = points.iter().map(|p| p.z).fold(f64::MAX, f64::min) - w;
        let hi = points.iter().map(|p| p.z).fold(f64::MIN, f64::max) + w;
        let steps = 200_000;
        let ds = (hi - lo) / steps as f64;
        let (mut optical, mut label) = (0.0, 0.0);
        for i in 0..steps {
            let s = lo + (i as f64 + 0.5) * ds;
            let mut dens = 0.0;
            let mut emit = 0.0;
            for p in points {
                let d = s - p.z;
                if d.abs() < w {
                    let g = k.footprint(p, x, y).g;
                    let e = rho * g * (-d * d / (2.0 * sz * sz)).exp();
                    dens += e;
                    emit += e * p.z;
                }
            }
            let t_mid = (-(optical + 0.5 * dens * ds)).exp();
            label += t_mid * emit * ds;
            optical += dens * ds;
        }
        label
    }

    #[test]
    fn coincident_pair_matches_ray_march() {
        let c = cfg();
        let pts = [ScenePoint::new(4.0, 4.0, 2.0), ScenePoint::new(4.0, 4.0, 6.0)];
        let oracle = ray_march_label(&pts, 4, 4, &c);
        assert!((oracle - 2.0).abs() < 0.2, "oracle {oracle}");
        let img = render(&pts, 9, 9, &c).unwrap();
        let s = img.labels()[(4, 4)];
        assert!((s - 2.0).abs() < 0.2, "{s}");
        assert!((s - oracle).abs() < 0.05, "{s} vs {oracle}");
    }
}
