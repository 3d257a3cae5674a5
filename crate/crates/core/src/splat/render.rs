use rayon::prelude::*;

use super::{window, Footprint, Kernel, SplatConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scene_io::ScenePoint;

/// One point's footprint at a pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contributor {
    pub index: u32,
    pub z: f64,
    pub w: f64,
    pub fp: Footprint,
}

/// Everything needed to evaluate (and differentiate) one pixel: its
/// contributors in depth order and the transmittance at each of their
/// quadrature samples.
pub(crate) struct PixelModel {
    pub contribs: Vec<Contributor>,
    /// `trans[j * n + k]`: transmittance at sample `k` of contributor `j`.
    pub trans: Vec<f64>,
    alphas: Vec<f64>,
}

impl PixelModel {
    /// `indices` must all cover the pixel; their order does not matter.
    pub fn new(kernel: &Kernel, points: &[ScenePoint], indices: &[u32], x: i64, y: i64) -> Self {
        let mut contribs: Vec<Contributor> = indices
            .iter()
            .map(|&i| {
                let p = &points[i as usize];
                Contributor {
                    index: i,
                    z: p.z,
                    w: p.weight(),
                    fp: kernel.footprint(p, x, y),
                }
            })
            .collect();
        contribs.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.index.cmp(&b.index)));

        let q = &kernel.depth;
        let n = q.offsets.len();
        let reach = super::DEPTH_WINDOW_SIGMAS * q.sigma_z;
        let mut trans = Vec::with_capacity(contribs.len() * n);
        let mut alphas = Vec::with_capacity(contribs.len());
        for cj in &contribs {
            let mut a = 0.0;
            for (off, e) in q.offsets.iter().zip(&q.emission) {
                let s = cj.z + off;
                let mut optical = 0.0;
                for co in &contribs {
                    if co.z - s >= reach {
                        break;
                    }
                    optical += co.fp.g * q.mass(s - co.z);
                }
                let t = (-q.rho * optical).exp();
                trans.push(t);
                a += e * t;
            }
            alphas.push(q.rho * q.ds * a);
        }
        PixelModel {
            contribs,
            trans,
            alphas,
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn position_of(&self, index: u32) -> usize {
        self.contribs
            .iter()
            .position(|c| c.index == index)
            .expect("index is a contributor")
    }

    /// Label and weight at this pixel.
    pub fn values(&self) -> (f64, f64) {
        let (mut s, mut l) = (0.0, 0.0);
        for (c, a) in self.contribs.iter().zip(&self.alphas) {
            s += a * c.z * c.fp.g;
            l += a * c.w * c.fp.h;
        }
        (s, l)
    }
}

/// Rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tile {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Tile {
    fn width(&self) -> usize {
        self.x1 - self.x0
    }
}

pub(crate) struct Tiling {
    pub tiles: Vec<Tile>,
    /// Point indices (ascending) whose window overlaps each tile.
    pub bins: Vec<Vec<u32>>,
}

impl Tiling {
    pub fn new(points: &[ScenePoint], width: usize, height: usize, cfg: &SplatConfig) -> Self {
        let size = if cfg.tile == 0 {
            width.max(height)
        } else {
            cfg.tile
        };
        let (ntx, nty) = (width.div_ceil(size), height.div_ceil(size));
        let mut tiles = Vec::with_capacity(ntx * nty);
        for ty in 0..nty {
            for tx in 0..ntx {
                tiles.push(Tile {
                    x0: tx * size,
                    y0: ty * size,
                    x1: ((tx + 1) * size).min(width),
                    y1: ((ty + 1) * size).min(height),
                });
            }
        }
        let mut bins = vec![Vec::new(); tiles.len()];
        let half = cfg.half_extent();
        for (i, p) in points.iter().enumerate() {
            if !p.is_active(width, height, half) {
                continue;
            }
            let Some((x0, x1, y0, y1)) = clip_window(p, half, width, height) else {
                continue;
            };
            for ty in y0 / size..=y1 / size {
                for tx in x0 / size..=x1 / size {
                    bins[ty * ntx + tx].push(i as u32);
                }
            }
        }
        Tiling { tiles, bins }
    }
}

/// Window clipped to the image, inclusive; `None` if it misses entirely.
pub(crate) fn clip_window(
    p: &ScenePoint,
    half: usize,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let (x0, x1, y0, y1) = window(p, half);
    let (w, h) = (width as i64, height as i64);
    if x1 < 0 || y1 < 0 || x0 >= w || y0 >= h {
        return None;
    }
    Some((
        x0.max(0) as usize,
        x1.min(w - 1) as usize,
        y0.max(0) as usize,
        y1.min(h - 1) as usize,
    ))
}

/// Per-pixel contributor lists of a tile, in the tile's row-major order.
pub(crate) fn tile_contributors(
    tile: &Tile,
    bin: &[u32],
    points: &[ScenePoint],
    half: usize,
    width: usize,
    height: usize,
) -> Vec<Vec<u32>> {
    let tw = tile.width();
    let mut lists = vec![Vec::new(); tw * (tile.y1 - tile.y0)];
    for &i in bin {
        let Some((x0, x1, y0, y1)) = clip_window(&points[i as usize], half, width, height) else {
            continue;
        };
        for y in y0.max(tile.y0)..=y1.min(tile.y1 - 1) {
            for x in x0.max(tile.x0)..=x1.min(tile.x1 - 1) {
                lists[(y - tile.y0) * tw + (x - tile.x0)].push(i);
            }
        }
    }
    lists
}

/// Rendered label and weight images plus the per-pixel contributor cache
/// the adjoint pass replays.
#[derive(Debug, Clone)]
pub struct SplatImages {
    labels: Grid,
    weights: Grid,
    offsets: Vec<usize>,
    contributors: Vec<u32>,
    alphas: Vec<f64>,
    points: Vec<ScenePoint>,
    config: SplatConfig,
}

impl SplatImages {
    pub fn labels(&self) -> &Grid {
        &self.labels
    }

    pub fn weights(&self) -> &Grid {
        &self.weights
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn config(&self) -> &SplatConfig {
        &self.config
    }

    /// Points the images were rendered from.
    pub fn points(&self) -> &[ScenePoint] {
        &self.points
    }

    /// Contributor indices at a pixel in depth order, with their α.
    pub fn contributors(&self, x: usize, y: usize) -> (&[u32], &[f64]) {
        let i = y * self.width() + x;
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.contributors[r.clone()], &self.alphas[r])
    }

    pub fn into_grids(self) -> (Grid, Grid) {
        (self.labels, self.weights)
    }
}

struct TileOutput {
    labels: Vec<f64>,
    weights: Vec<f64>,
    lists: Vec<Vec<u32>>,
    alphas: Vec<Vec<f64>>,
}

/// Renders label and weight images of size `width`×`height`.
pub fn render(
    points: &[ScenePoint],
    width: usize,
    height: usize,
    cfg: &SplatConfig,
) -> Result<SplatImages> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::DimensionMismatch(format!(
            "cannot render into a {width}x{height} grid"
        )));
    }
    if let Some(i) = points
        .iter()
        .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.log_weight.is_finite()))
    {
        return Err(Error::Points(format!("point {i} has non-finite parameters")));
    }
    let kernel = Kernel::new(cfg);
    let tiling = Tiling::new(points, width, height, cfg);

    let outputs: Vec<TileOutput> = tiling
        .tiles
        .par_iter()
        .zip(tiling.bins.par_iter())
        .map(|(tile, bin)| {
            let lists = tile_contributors(tile, bin, points, kernel.half, width, height);
            let n = lists.len();
            let mut out = TileOutput {
                labels: vec![0.0; n],
                weights: vec![0.0; n],
                lists: Vec::with_capacity(n),
                alphas: Vec::with_capacity(n),
            };
            let tw = tile.width();
            for (i, list) in lists.into_iter().enumerate() {
                let (x, y) = ((tile.x0 + i % tw) as i64, (tile.y0 + i / tw) as i64);
                let px = PixelModel::new(&kernel, points, &list, x, y);
                let (s, l) = px.values();
                out.labels[i] = s;
                out.weights[i] = l;
                out.lists.push(px.contribs.iter().map(|c| c.index).collect());
                out.alphas.push(px.alphas);
            }
            out
        })
        .collect();

    let mut labels = Grid::zeros(width, height);
    let mut weights = Grid::zeros(width, height);
    let mut per_pixel: Vec<(Vec<u32>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); width * height];
    for (tile, out) in tiling.tiles.iter().zip(outputs) {
        let tw = tile.width();
        for (i, (list, al)) in out.lists.into_iter().zip(out.alphas).enumerate() {
            let (x, y) = (tile.x0 + i % tw, tile.y0 + i / tw);
            labels[(x, y)] = out.labels[i];
            weights[(x, y)] = out.weights[i];
            per_pixel[y * width + x] = (list, al);
        }
    }
    let mut offsets = Vec::with_capacity(width * height + 1);
    let mut contributors = Vec::new();
    let mut alphas = Vec::new();
    offsets.push(0);
    for (list, al) in per_pixel {
        contributors.extend_from_slice(&list);
        alphas.extend_from_slice(&al);
        offsets.push(contributors.len());
    }

    Ok(SplatImages {
        labels,
        weights,
        offsets,
        contributors,
        alphas,
        points: points.to_vec(),
        config: *cfg,
    })
}
