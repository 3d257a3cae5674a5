use rayon::prelude::*;

use crate::grid::{Grid, Image};
use crate::scene_io::camera::{mat_mul, mat_vec, sub, transpose};
use crate::scene_io::{CameraMode, CameraModel, View};

/// Where each central pixel lands in another view for the current depth.
#[derive(Debug, Clone)]
pub(crate) struct Reprojection {
    pub width: usize,
    pub height: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// d x / d D and d y / d D.
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    /// Visibility key in the target view; smaller is nearer.
    pub key: Vec<f64>,
    /// Lands in front of the target camera.
    pub front: Vec<bool>,
    pub identity: bool,
}

impl Reprojection {
    pub fn new(view: &CameraModel, central: &CameraModel, depth: &Grid) -> Self {
        let (w, h) = (depth.width(), depth.height());
        let n = w * h;
        let d = depth.as_slice();
        let mut r = Reprojection {
            width: w,
            height: h,
            x: vec![0.0; n],
            y: vec![0.0; n],
            dx: vec![0.0; n],
            dy: vec![0.0; n],
            key: vec![0.0; n],
            front: vec![true; n],
            identity: view == central,
        };
        let pixel = |p: usize| ((p % w) as f64, (p / w) as f64);
        match (view.mode, central.mode) {
            (
                CameraMode::LightFieldShift {
                    u,
                    v,
                    baseline_u,
                    baseline_v,
                },
                CameraMode::LightFieldShift { u: uc, v: vc, .. },
            ) => {
                let (su, sv) = ((u - uc) * baseline_u, (v - vc) * baseline_v);
                for p in 0..n {
                    let (x, y) = pixel(p);
                    r.x[p] = x + d[p] * su;
                    r.y[p] = y + d[p] * sv;
                    r.dx[p] = su;
                    r.dy[p] = sv;
                    // Larger disparity is nearer.
                    r.key[p] = -d[p];
                }
            }
            _ => {
                // X_view(D) = D·a + b with a = R_v R_cᵀ ray_c, b = t_v − R_v R_cᵀ t_c.
                let rel = mat_mul(&view.rotation(), &transpose(&central.rotation()));
                let b = sub(view.translation(), mat_vec(&rel, central.translation()));
                let k = &view.intrinsics;
                for p in 0..n {
                    let (x, y) = pixel(p);
                    if r.identity {
                        r.x[p] = x;
                        r.y[p] = y;
                        r.key[p] = d[p];
                        continue;
                    }
                    let a = mat_vec(&rel, central.ray(x, y));
                    let c = [d[p] * a[0] + b[0], d[p] * a[1] + b[1], d[p] * a[2] + b[2]];
                    let q = mat_vec(k, c);
                    let dq = mat_vec(k, a);
                    r.key[p] = c[2];
                    if !(c[2] > 0.0 && q[2] != 0.0) {
                        r.front[p] = false;
                        continue;
                    }
                    r.x[p] = q[0] / q[2];
                    r.y[p] = q[1] / q[2];
                    r.dx[p] = (dq[0] * q[2] - q[0] * dq[2]) / (q[2] * q[2]);
                    r.dy[p] = (dq[1] * q[2] - q[1] * dq[2]) / (q[2] * q[2]);
                }
            }
        }
        r
    }

    pub fn in_bounds(&self, p: usize) -> bool {
        let (x, y) = (self.x[p], self.y[p]);
        self.front[p]
            && x >= 0.0
            && y >= 0.0
            && x <= (self.width - 1) as f64
            && y <= (self.height - 1) as f64
    }

    /// Binary visibility: in bounds and not hidden behind another central
    /// pixel landing on the same target pixel with a key smaller by more
    /// than `tau`.
    pub fn mask(&self, tau: f64) -> Vec<bool> {
        let n = self.width * self.height;
        if self.identity {
            return vec![true; n];
        }
        let target = |p: usize| -> Option<usize> {
            if !self.in_bounds(p) {
                return None;
            }
            let (tx, ty) = (self.x[p].round() as usize, self.y[p].round() as usize);
            Some(ty * self.width + tx)
        };
        let mut zbuf = vec![f64::INFINITY; n];
        for p in 0..n {
            if let Some(t) = target(p) {
                zbuf[t] = zbuf[t].min(self.key[p]);
            }
        }
        (0..n)
            .map(|p| match target(p) {
                Some(t) => !(zbuf[t] < self.key[p] - tau),
                None => false,
            })
            .collect()
    }
}

/// Occlusion threshold in key units for a given depth map.
pub(crate) fn occlusion_tau(depth: &Grid, fraction: f64) -> f64 {
    let (lo, hi) = depth.min_max();
    if hi > lo {
        fraction * (hi - lo)
    } else {
        0.0
    }
}

/// Bilinear sample with clamping at the borders. Writes the value of each
/// channel and its partial derivatives along x and y (zero along a clamped
/// axis).
pub(crate) fn sample(
    img: &Image,
    x: f64,
    y: f64,
    out: &mut [f64],
    gx: &mut [f64],
    gy: &mut [f64],
) {
    let (w, h) = (img.width(), img.height());
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let xc = x.clamp(0.0, xmax);
    let yc = y.clamp(0.0, ymax);
    let x0 = (xc.floor() as usize).min(w.saturating_sub(2));
    let y0 = (yc.floor() as usize).min(h.saturating_sub(2));
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
    let free_x = x == xc && w > 1;
    let free_y = y == yc && h > 1;
    let (v00, v10, v01, v11) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
    for c in 0..img.channels() {
        out[c] = (1.0 - fx) * (1.0 - fy) * v00[c]
            + fx * (1.0 - fy) * v10[c]
            + (1.0 - fx) * fy * v01[c]
            + fx * fy * v11[c];
        gx[c] = if free_x {
            (1.0 - fy) * (v10[c] - v00[c]) + fy * (v11[c] - v01[c])
        } else {
            0.0
        };
        gy[c] = if free_y {
            (1.0 - fx) * (v01[c] - v00[c]) + fx * (v11[c] - v10[c])
        } else {
            0.0
        };
    }
}

/// A source image resampled into the central frame, with the per-channel
/// derivative of each sample with respect to the central depth.
#[derive(Debug, Clone)]
pub(crate) struct Resampled {
    pub values: Image,
    /// `d values / d D`, interleaved like `values`.
    pub d_depth: Vec<f64>,
}

pub(crate) fn resample(src: &Image, rep: &Reprojection) -> Resampled {
    let (w, h, ch) = (rep.width, rep.height, src.channels());
    if rep.identity {
        return Resampled {
            values: src.clone(),
            d_depth: vec![0.0; w * h * ch],
        };
    }
    let mut values = vec![0.0; w * h * ch];
    let mut d_depth = vec![0.0; w * h * ch];
    values
        .par_chunks_mut(ch)
        .zip(d_depth.par_chunks_mut(ch))
        .enumerate()
        .for_each(|(p, (out, dd))| {
            let mut gx = vec![0.0; ch];
            let mut gy = vec![0.0; ch];
            sample(src, rep.x[p], rep.y[p], out, &mut gx, &mut gy);
            if rep.front[p] {
                for c in 0..ch {
                    dd[c] = gx[c] * rep.dx[p] + gy[c] * rep.dy[p];
                }
            } else {
                dd.fill(0.0);
            }
        });
    Resampled {
        values: Image::from_vec(w, h, ch, values).expect("sized to the grid"),
        d_depth,
    }
}

/// A view resampled into the central frame.
#[derive(Debug, Clone)]
pub struct WarpResult {
    pub warped: Image,
    /// 1 where the sample is valid, 0 where it falls outside the view or is
    /// occluded.
    pub mask: Grid,
}

/// Default occlusion threshold as a fraction of the depth range.
pub const DEFAULT_OCCLUSION_TAU: f64 = 0.01;

/// Inverse-warps `view` into the central frame through `depth`.
pub fn warp(view: &View, depth: &Grid, central: &CameraModel) -> WarpResult {
    let rep = Reprojection::new(&view.camera, central, depth);
    let mask = rep.mask(occlusion_tau(depth, DEFAULT_OCCLUSION_TAU));
    WarpResult {
        warped: resample(&view.image, &rep).values,
        mask: mask_grid(depth.width(), depth.height(), &mask),
    }
}

/// Binary visibility of each central pixel in `view` using a z-buffer with
/// threshold `tau_fraction` of the depth range.
pub fn occlusion_mask(view: &View, depth: &Grid, central: &CameraModel, tau_fraction: f64) -> Grid {
    let rep = Reprojection::new(&view.camera, central, depth);
    let mask = rep.mask(occlusion_tau(depth, tau_fraction));
    mask_grid(depth.width(), depth.height(), &mask)
}

fn mask_grid(w: usize, h: usize, mask: &[bool]) -> Grid {
    Grid::from_vec(w, h, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
        .expect("sized to the grid")
}
