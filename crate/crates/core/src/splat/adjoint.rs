use rayon::prelude::*;

use super::render::{PixelModel, SplatImages, Tiling};
use super::Kernel;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scene_io::ScenePoint;

/// Gradient of a scalar loss with respect to one point's parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointGrad {
    pub z: f64,
    pub x: f64,
    pub y: f64,
    pub log_weight: f64,
}

impl PointGrad {
    fn add(&mut self, o: &PointGrad) {
        self.z += o.z;
        self.x += o.x;
        self.y += o.y;
        self.log_weight += o.log_weight;
    }
}

/// Per-contributor partials at one pixel.
#[derive(Clone, Copy, Default)]
struct Partial {
    z: f64,
    g: f64,
    h: f64,
    log_weight: f64,
}

/// Back-propagates gradients on the label and weight images to the points
/// `images` was rendered from.
pub fn render_adjoint(
    images: &SplatImages,
    points: &[ScenePoint],
    grad_labels: &Grid,
    grad_weights: &Grid,
) -> Result<Vec<PointGrad>> {
    if points != images.points() {
        return Err(Error::CacheMismatch);
    }
    let (w, h) = (images.width(), images.height());
    for g in [grad_labels, grad_weights] {
        if g.width() != w || g.height() != h {
            return Err(Error::DimensionMismatch(format!(
                "gradient grid is {}x{}, images are {w}x{h}",
                g.width(),
                g.height()
            )));
        }
    }
    let cfg = images.config();
    let kernel = Kernel::new(cfg);
    let tiling = Tiling::new(points, w, h, cfg);

    let locals: Vec<Vec<PointGrad>> = tiling
        .tiles
        .par_iter()
        .zip(tiling.bins.par_iter())
        .map(|(tile, bin)| {
            let mut acc = vec![PointGrad::default(); bin.len()];
            let mut partial = Vec::new();
            for y in tile.y0..tile.y1 {
                for x in tile.x0..tile.x1 {
                    let gs = grad_labels[(x, y)];
                    let gl = grad_weights[(x, y)];
                    if gs == 0.0 && gl == 0.0 {
                        continue;
                    }
                    let (list, _) = images.contributors(x, y);
                    if list.is_empty() {
                        continue;
                    }
                    let px = PixelModel::new(&kernel, points, list, x as i64, y as i64);
                    pixel_adjoint(&kernel, &px, gs, gl, &mut partial);
                    for (c, p) in px.contribs.iter().zip(&partial) {
                        let slot = bin.binary_search(&c.index).expect("contributor is binned");
                        let fp = &c.fp;
                        let dpos = p.g * fp.g * kernel.dg_scale() + p.h * fp.h * kernel.dh_scale();
                        acc[slot].add(&PointGrad {
                            z: p.z,
                            x: dpos * fp.dx,
                            y: dpos * fp.dy,
                            log_weight: p.log_weight,
                        });
                    }
                }
            }
            acc
        })
        .collect();

    let mut grads = vec![PointGrad::default(); points.len()];
    for (bin, acc) in tiling.bins.iter().zip(&locals) {
        for (&i, g) in bin.iter().zip(acc) {
            grads[i as usize].add(g);
        }
    }
    Ok(grads)
}

/// Reverse pass through one pixel's label/weight sums, the α quadrature and
/// the depth-ordered transmittance. Fills `out` in contributor order.
fn pixel_adjoint(kernel: &Kernel, px: &PixelModel, gs: f64, gl: f64, out: &mut Vec<Partial>) {
    let q = &kernel.depth;
    let reach = super::DEPTH_WINDOW_SIGMAS * q.sigma_z;
    let n = q.offsets.len();
    let cs = &px.contribs;
    out.clear();
    out.resize(cs.len(), Partial::default());

    for (j, (cj, &aj)) in cs.iter().zip(px.alphas()).enumerate() {
        let wh = cj.w * cj.fp.h;
        out[j].z += gs * aj * cj.fp.g;
        out[j].g += gs * aj * cj.z;
        out[j].h += gl * aj * cj.w;
        out[j].log_weight -= gl * aj * wh;

        let d_alpha = gs * cj.z * cj.fp.g + gl * wh;
        if d_alpha == 0.0 {
            continue;
        }
        for k in 0..n {
            let b = d_alpha * q.rho * q.ds * q.emission[k] * px.trans[j * n + k];
            // dL/d(optical depth) at this sample.
            let d_opt = -q.rho * b;
            let s = cj.z + q.offsets[k];
            for (o, co) in cs.iter().enumerate() {
                if co.z - s >= reach {
                    break;
                }
                let d = s - co.z;
                out[o].g += d_opt * q.mass(d);
                if o != j {
                    let t = d_opt * co.fp.g * q.density(d);
                    out[j].z += t;
                    out[o].z -= t;
                }
            }
        }
    }
}
