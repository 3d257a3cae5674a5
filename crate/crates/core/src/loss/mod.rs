//! Self-supervised multi-view objective and evaluation metrics.
//!
//! For every non-central view, the view is inverse-warped into the central
//! frame through the current depth map. A z-buffer occlusion test and a
//! bounds check give each warp a binary mask. The objective sums, over
//! central pixels:
//!
//! * `E_Θ`, the masked mean over views of the channel-mean L1 photometric
//!   (or feature) error;
//! * an edge-aware smoothness term on the depth;
//! * a masked mean structural dissimilarity (SSIM) term;
//! * minus a reward on the gradient magnitude of `E_Θ`, which lets sharp
//!   depth edges keep their unavoidable reprojection error.
//!
//! Masks are piecewise constant in the depth, so the gradient treats them as
//! fixed.

mod metrics;
mod ssim;
mod warp;

pub use metrics::{
    metrics, quantile_sorted, scale_fit, supervised_loss, Metrics, DEFAULT_BP_THRESHOLDS,
};
pub use warp::{occlusion_mask, warp, WarpResult, DEFAULT_OCCLUSION_TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Image};
use crate::scene_io::MultiViewSet;
use warp::{occlusion_tau, resample, Reprojection, Resampled};

/// Maps an image to the feature space in which the photometric error is
/// measured. The structural term always uses the RGB images.
pub trait FeatureTransform: Send + Sync {
    fn apply(&self, image: &Image) -> Image;

    /// Whether `apply` is the identity, letting RGB warps be shared.
    fn is_identity(&self) -> bool {
        false
    }
}

/// Plain RGB distances.
#[derive(Debug, Clone, Copy, Default)]
pub struct RgbFeatures;

impl FeatureTransform for RgbFeatures {
    fn apply(&self, image: &Image) -> Image {
        image.clone()
    }

    fn is_identity(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w_smooth: f64,
    pub w_ssim: f64,
    pub w_grad: f64,
    /// Guards the masked mean where no view is visible.
    pub eps: f64,
    /// Occlusion threshold as a fraction of the current depth range.
    pub occlusion_tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_smooth: 1.0,
            w_ssim: 1.0,
            w_grad: 1.0,
            eps: 1e-6,
            occlusion_tau: DEFAULT_OCCLUSION_TAU,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_smooth", self.w_smooth),
            ("w_ssim", self.w_ssim),
            ("w_grad", self.w_grad),
            ("occlusion_tau", self.occlusion_tau),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Unweighted per-term sums over pixels and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub e_theta: f64,
    pub e_s: f64,
    pub e_ssim: f64,
    pub grad_reward: f64,
    pub total: f64,
}

/// The multi-view objective for a fixed set of views.
pub struct PhotometricLoss<'a> {
    views: &'a MultiViewSet,
    cfg: LossConfig,
    central_features: Image,
    features: Vec<Option<Image>>,
    shared_rgb: bool,
    edge_x: Vec<f64>,
    edge_y: Vec<f64>,
}

struct Pass {
    breakdown: LossBreakdown,
    e_map: Vec<f64>,
    grad: Option<Vec<f64>>,
}

struct ViewEval {
    mask: Vec<bool>,
    feat: Resampled,
    rgb: Option<Resampled>,
}

impl<'a> PhotometricLoss<'a> {
    pub fn new(views: &'a MultiViewSet, cfg: LossConfig) -> Result<Self> {
        Self::with_transform(views, cfg, &RgbFeatures)
    }

    pub fn with_transform(
        views: &'a MultiViewSet,
        cfg: LossConfig,
        transform: &dyn FeatureTransform,
    ) -> Result<Self> {
        cfg.validate()?;
        if views.len() < 2 {
            return Err(Error::Config(
                "the reprojection loss needs at least one non-central view".into(),
            ));
        }
        let c = views.central_index();
        let central_features = transform.apply(&views.central().image);
        let features: Vec<Option<Image>> = views
            .views()
            .iter()
            .enumerate()
            .map(|(i, v)| (i != c).then(|| transform.apply(&v.image)))
            .collect();
        for f in features.iter().flatten().chain([&central_features]) {
            if f.width() != views.width() || f.height() != views.height() {
                return Err(Error::DimensionMismatch(
                    "feature transform changed the image size".into(),
                ));
            }
        }
        let (ex, ey) = edge_weights(&views.central().image);
        Ok(PhotometricLoss {
            views,
            cfg,
            central_features,
            features,
            shared_rgb: transform.is_identity(),
            edge_x: ex,
            edge_y: ey,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    pub fn evaluate(&self, depth: &Grid) -> Result<LossBreakdown> {
        Ok(self.run(depth, false)?.breakdown)
    }

    /// The loss and its gradient with respect to every depth pixel.
    pub fn evaluate_with_grad(&self, depth: &Grid) -> Result<(LossBreakdown, Grid)> {
        let pass = self.run(depth, true)?;
        let grad = Grid::from_vec(depth.width(), depth.height(), pass.grad.expect("requested"))?;
        Ok((pass.breakdown, grad))
    }

    /// Per-pixel reprojection error `E_Θ`.
    pub fn error_map(&self, depth: &Grid) -> Result<Grid> {
        let pass = self.run(depth, false)?;
        Grid::from_vec(depth.width(), depth.height(), pass.e_map)
    }

    fn check(&self, depth: &Grid) -> Result<()> {
        if depth.width() != self.views.width() || depth.height() != self.views.height() {
            return Err(Error::DimensionMismatch(format!(
                "depth is {}x{}, views are {}x{}",
                depth.width(),
                depth.height(),
                self.views.width(),
                self.views.height()
            )));
        }
        match depth.count_non_finite() {
            0 => Ok(()),
            count => Err(Error::NonFinite { count }),
        }
    }

    fn eval_view(&self, i: usize, depth: &Grid, tau: f64) -> ViewEval {
        let view = &self.views.views()[i];
        let rep = Reprojection::new(&view.camera, &self.views.central().camera, depth);
        let mask = rep.mask(tau);
        let feat = resample(self.features[i].as_ref().expect("non-central"), &rep);
        let rgb = (!self.shared_rgb).then(|| resample(&view.image, &rep));
        ViewEval { mask, feat, rgb }
    }

    fn others(&self) -> impl Iterator<Item = usize> + '_ {
        let c = self.views.central_index();
        (0..self.views.len()).filter(move |&i| i != c)
    }

    fn run(&self, depth: &Grid, want_grad: bool) -> Result<Pass> {
        self.check(depth)?;
        let (w, h) = (depth.width(), depth.height());
        let n = w * h;
        let tau = occlusion_tau(depth, self.cfg.occlusion_tau);
        let central_rgb = &self.views.central().image;

        let mut count = vec![0.0; n];
        let mut e_num = vec![0.0; n];
        let mut s_num = vec![0.0; n];
        for i in self.others() {
            let v = self.eval_view(i, depth, tau);
            let err = l1_map(&self.central_features, &v.feat.values);
            let warped_rgb = v.rgb.as_ref().unwrap_or(&v.feat);
            let dssim = ssim::dssim_map(central_rgb, &fill_masked(&warped_rgb.values, central_rgb, &v.mask));
            for p in 0..n {
                if v.mask[p] {
                    count[p] += 1.0;
                    e_num[p] += err[p];
                    s_num[p] += dssim[p];
                }
            }
        }
        let eps = self.cfg.eps;
        let e_map: Vec<f64> = (0..n).map(|p| e_num[p] / (count[p] + eps)).collect();
        let s_map: Vec<f64> = (0..n).map(|p| s_num[p] / (count[p] + eps)).collect();
        let (gx, gy) = central_diff(&e_map, w, h);
        let reward: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
        let e_s = smoothness(depth, &self.edge_x, &self.edge_y, None);

        let mut b = LossBreakdown {
            e_theta: crate::reduce::sum(&e_map),
            e_s,
            e_ssim: crate::reduce::sum(&s_map),
            grad_reward: crate::reduce::sum(&reward),
            total: 0.0,
        };
        b.total = b.e_theta + self.cfg.w_smooth * b.e_s + self.cfg.w_ssim * b.e_ssim
            - self.cfg.w_grad * b.grad_reward;
        if !want_grad {
            return Ok(Pass {
                breakdown: b,
                e_map,
                grad: None,
            });
        }

        // dL/dE_Θ per pixel.
        let d_reward = reward_adjoint(&gx, &gy, &reward, w, h);
        let g_e: Vec<f64> = (0..n).map(|p| 1.0 - self.cfg.w_grad * d_reward[p]).collect();
        let mut grad = vec![0.0; n];
        smoothness(depth, &self.edge_x, &self.edge_y, Some((&mut grad, self.cfg.w_smooth)));

        let ch = self.central_features.channels();
        for i in self.others() {
            let v = self.eval_view(i, depth, tau);
            let coef: Vec<f64> = (0..n)
                .map(|p| if v.mask[p] { 1.0 / (count[p] + eps) } else { 0.0 })
                .collect();
            let cf = self.central_features.as_slice();
            let wf = v.feat.values.as_slice();
            grad.par_iter_mut().enumerate().for_each(|(p, g)| {
                if coef[p] == 0.0 {
                    return;
                }
                let ge = g_e[p] * coef[p] / ch as f64;
                for c in 0..ch {
                    let k = p * ch + c;
                    let diff = cf[k] - wf[k];
                    // d|a − W| / dW = −sign(a − W)
                    let s = if diff > 0.0 {
                        -1.0
                    } else if diff < 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    *g += ge * s * v.feat.d_depth[k];
                }
            });
            if self.cfg.w_ssim != 0.0 {
                let rs = v.rgb.as_ref().unwrap_or(&v.feat);
                let g_s: Vec<f64> = coef.iter().map(|c| self.cfg.w_ssim * c).collect();
                let filled = fill_masked(&rs.values, central_rgb, &v.mask);
                let g_w = ssim::dssim_adjoint(central_rgb, &filled, &g_s);
                let rc = rs.values.channels();
                grad.par_iter_mut().enumerate().for_each(|(p, g)| {
                    if !v.mask[p] {
                        return;
                    }
                    for c in 0..rc {
                        let k = p * rc + c;
                        *g += g_w[k] * rs.d_depth[k];
                    }
                });
            }
        }
        Ok(Pass {
            breakdown: b,
            e_map,
            grad: Some(grad),
        })
    }
}

/// `warped` with masked-out samples replaced by the reference, so invalid
/// samples cannot leak into the structural windows of valid neighbours.
fn fill_masked(warped: &Image, reference: &Image, mask: &[bool]) -> Image {
    let mut out = warped.clone();
    for (p, &m) in mask.iter().enumerate() {
        if !m {
            let (x, y) = (p % warped.width(), p / warped.width());
            out.pixel_mut(x, y).copy_from_slice(reference.pixel(x, y));
        }
    }
    out
}

/// Channel-mean absolute difference per pixel.
fn l1_map(a: &Image, b: &Image) -> Vec<f64> {
    let ch = a.channels();
    a.as_slice()
        .chunks(ch)
        .zip(b.as_slice().chunks(ch))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / ch as f64)
        .collect()
}

/// `exp(−|∂I|)` on forward differences of the channel-mean image; zero
/// where the forward neighbour is missing.
fn edge_weights(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let m = img.channel_mean();
    let (w, h) = (m.width(), m.height());
    let mut ex = vec![0.0; w * h];
    let mut ey = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                ex[p] = (-(m[(x + 1, y)] - m[(x, y)]).abs()).exp();
            }
            if y + 1 < h {
                ey[p] = (-(m[(x, y + 1)] - m[(x, y)]).abs()).exp();
            }
        }
    }
    (ex, ey)
}

/// `Σ |∂x D| e_x + |∂y D| e_y`; optionally accumulates `scale` times its
/// gradient.
fn smoothness(depth: &Grid, ex: &[f64], ey: &[f64], grad: Option<(&mut Vec<f64>, f64)>) -> f64 {
    let (w, h) = (depth.width(), depth.height());
    let d = depth.as_slice();
    let mut terms = Vec::with_capacity(2 * w * h);
    let mut grad = grad;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for (q, e) in [
                ((x + 1 < w).then(|| p + 1), ex[p]),
                ((y + 1 < h).then(|| p + w), ey[p]),
            ] {
                let Some(q) = q else { continue };
                let diff = d[q] - d[p];
                terms.push(diff.abs() * e);
                if let Some((g, scale)) = grad.as_mut() {
                    let s = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    g[q] += *scale * s * e;
                    g[p] -= *scale * s * e;
                }
            }
        }
    }
    crate::reduce::sum(&terms)
}

/// Central differences, one-sided on the border.
fn central_diff(e: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let d1 = |get: &dyn Fn(usize) -> f64, i: usize, len: usize| -> f64 {
        if len < 2 {
            0.0
        } else if i == 0 {
            get(1) - get(0)
        } else if i == len - 1 {
            get(i) - get(i - 1)
        } else {
            0.5 * (get(i + 1) - get(i - 1))
        }
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            gx[y * w + x] = d1(&|i| e[y * w + i], x, w);
            gy[y * w + x] = d1(&|j| e[j * w + x], y, h);
        }
    }
    (gx, gy)
}

/// Gradient of `Σ ‖(gx, gy)‖` with respect to the differenced map.
fn reward_adjoint(gx: &[f64], gy: &[f64], norm: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let spread = |out: &mut Vec<f64>, a: f64, i: usize, len: usize, at: &dyn Fn(usize) -> usize| {
        if len < 2 || a == 0.0 {
            return;
        }
        if i == 0 {
            out[at(1)] += a;
            out[at(0)] -= a;
        } else if i == len - 1 {
            out[at(i)] += a;
            out[at(i - 1)] -= a;
        } else {
            out[at(i + 1)] += 0.5 * a;
            out[at(i - 1)] -= 0.5 * a;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if norm[p] == 0.0 {
                continue;
            }
            spread(&mut out, gx[p] / norm[p], x, w, &|i| y * w + i);
            spread(&mut out, gy[p] / norm[p], y, h, &|j| j * w + x);
        }
    }
    out
}

/// Per-pixel reprojection error `E_Θ` with default settings and an
/// optional feature transform.
pub fn reprojection_error(
    views: &MultiViewSet,
    depth: &Grid,
    transform: Option<&dyn FeatureTransform>,
) -> Result<Grid> {
    let loss = PhotometricLoss::with_transform(views, LossConfig::default(), transform.unwrap_or(&RgbFeatures))?;
    loss.error_map(depth)
}

/// Edge-aware smoothness `Σ |∂D|·exp(−|∂I|)`.
pub fn smoothness_term(depth: &Grid, image: &Image) -> Result<f64> {
    if depth.width() != image.width() || depth.height() != image.height() {
        return Err(Error::DimensionMismatch("depth and image sizes differ".into()));
    }
    let (ex, ey) = edge_weights(image);
    Ok(smoothness(depth, &ex, &ey, None))
}

/// Mean over pixels seen by at least one warp of the masked mean
/// `(1 − SSIM) / 2`.
pub fn ssim_term(central: &Image, warps: &[WarpResult]) -> f64 {
    let n = central.width() * central.height();
    let mut num = vec![0.0; n];
    let mut cnt = vec![0.0; n];
    for wr in warps {
        let mask: Vec<bool> = wr.mask.as_slice().iter().map(|&m| m > 0.0).collect();
        let d = ssim::dssim_map(central, &fill_masked(&wr.warped, central, &mask));
        for p in 0..n {
            let m = wr.mask.as_slice()[p];
            num[p] += m * d[p];
            cnt[p] += m;
        }
    }
    let seen: Vec<f64> = (0..n).filter(|&p| cnt[p] > 0.0).map(|p| num[p] / cnt[p]).collect();
    if seen.is_empty() {
        0.0
    } else {
        crate::reduce::sum(&seen) / seen.len() as f64
    }
}

/// Evaluates the objective and its depth gradient.
pub fn total_loss(views: &MultiViewSet, depth: &Grid, cfg: &LossConfig) -> Result<(LossBreakdown, Grid)> {
    PhotometricLoss::new(views, *cfg)?.evaluate_with_grad(depth)
}
