//! Screened-Poisson diffusion of splatted depth labels into a dense map.
//!
//! The dense depth `D` minimises
//! `Σ_p λ_p (D_p − S_p)² + ½ Σ_p Σ_{q∈N(p)} ϑ_p (D_q − D_p)²`
//! over a 4-connected grid with Neumann boundaries. Its normal equations are
//! `A D = λ ∘ S` with `A = diag(λ) + L`, where `L` is the graph Laplacian with
//! edge conductance `(ϑ_p + ϑ_q) / 2`.

mod hierarchy;
mod pcg;

pub use hierarchy::HierarchicalBasis;
pub use pcg::{Preconditioner, SolveStats, SolverConfig};

use std::ops::Deref;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image};
use crate::splat::SplatImages;

/// Per-pixel smoothness parameter `Q`; the diffusion strength is
/// `ϑ = exp(−Q)`, positive for any finite `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessField {
    q: Grid,
}

impl SmoothnessField {
    pub fn new(q: Grid) -> Self {
        SmoothnessField { q }
    }

    /// `Q = 0`, i.e. unit smoothness everywhere.
    pub fn uniform(width: usize, height: usize) -> Self {
        SmoothnessField::new(Grid::zeros(width, height))
    }

    /// `Q` set to the image gradient magnitude, so diffusion slows across
    /// colour edges.
    pub fn from_image(image: &Image) -> Self {
        SmoothnessField::new(image.gradient_magnitude())
    }

    pub fn q(&self) -> &Grid {
        &self.q
    }

    pub fn q_mut(&mut self) -> &mut Grid {
        &mut self.q
    }

    pub fn theta(&self) -> Grid {
        self.q.map(|q| (-q).exp())
    }
}

/// A dense depth (or disparity) map.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(Grid);

impl DepthMap {
    pub fn new(grid: Grid) -> Self {
        DepthMap(grid)
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl Deref for DepthMap {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// Assembled sparse system `A D = b` on a 5-point stencil.
#[derive(Debug, Clone)]
pub struct DiffusionSystem {
    width: usize,
    height: usize,
    /// λ, the data weights.
    lambda: Vec<f64>,
    labels: Vec<f64>,
    theta: Vec<f64>,
    diag: Vec<f64>,
    /// Conductance to the right neighbour (0 on the last column).
    east: Vec<f64>,
    /// Conductance to the neighbour below (0 on the last row).
    south: Vec<f64>,
    rhs: Vec<f64>,
}

/// Gradients of a loss with respect to the diffusion inputs.
#[derive(Debug, Clone)]
pub struct DiffusionGrads {
    pub labels: Grid,
    pub weights: Grid,
    pub q: Grid,
}

/// Builds the system from rendered splats.
pub fn assemble(splats: &SplatImages, smooth: &SmoothnessField) -> Result<DiffusionSystem> {
    DiffusionSystem::new(splats.labels(), splats.weights(), smooth)
}

impl DiffusionSystem {
    pub fn new(labels: &Grid, weights: &Grid, smooth: &SmoothnessField) -> Result<Self> {
        let (w, h) = (labels.width(), labels.height());
        for (name, g) in [("weights", weights), ("smoothness", smooth.q())] {
            if !g.same_shape(labels) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} grid is {}x{}, labels are {w}x{h}",
                    g.width(),
                    g.height()
                )));
            }
        }
        let n = w * h;
        let non_finite =
            labels.count_non_finite() + weights.count_non_finite() + smooth.q().count_non_finite();
        if non_finite > 0 {
            return Err(Error::NonFinite { count: non_finite });
        }
        if weights.as_slice().iter().any(|&l| l < 0.0) {
            return Err(Error::DimensionMismatch("negative data weight".into()));
        }
        if weights.as_slice().iter().all(|&l| l == 0.0) {
            return Err(Error::SingularSystem);
        }
        let theta = smooth.theta().into_vec();
        let mut east = vec![0.0; n];
        let mut south = vec![0.0; n];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if x + 1 < w {
                    east[p] = 0.5 * (theta[p] + theta[p + 1]);
                }
                if y + 1 < h {
                    south[p] = 0.5 * (theta[p] + theta[p + w]);
                }
            }
        }
        let lambda = weights.as_slice().to_vec();
        let mut diag = lambda.clone();
        for p in 0..n {
            diag[p] += east[p] + south[p];
            if p % w > 0 {
                diag[p] += east[p - 1];
            }
            if p >= w {
                diag[p] += south[p - w];
            }
        }
        let rhs = lambda
            .iter()
            .zip(labels.as_slice())
            .map(|(l, s)| l * s)
            .collect();
        Ok(DiffusionSystem {
            width: w,
            height: h,
            lambda,
            labels: labels.as_slice().to_vec(),
            theta,
            diag,
            east,
            south,
            rhs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub(crate) fn east(&self) -> &[f64] {
        &self.east
    }

    pub(crate) fn south(&self) -> &[f64] {
        &self.south
    }

    pub(crate) fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Matrix entry `A[p][q]` for flat pixel indices.
    pub fn entry(&self, p: usize, q: usize) -> f64 {
        let w = self.width;
        if p == q {
            return self.diag[p];
        }
        let (lo, hi) = (p.min(q), p.max(q));
        if hi == lo + 1 && hi % w != 0 {
            -self.east[lo]
        } else if hi == lo + w {
            -self.south[lo]
        } else {
            0.0
        }
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let w = self.width;
        y.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
            let base = row * w;
            for (i, o) in out.iter_mut().enumerate() {
                let p = base + i;
                let mut v = self.diag[p] * x[p];
                if i > 0 {
                    v -= self.east[p - 1] * x[p - 1];
                }
                if i + 1 < w {
                    v -= self.east[p] * x[p + 1];
                }
                if row > 0 {
                    v -= self.south[p - w] * x[p - w];
                }
                if p + w < x.len() {
                    v -= self.south[p] * x[p + w];
                }
                *o = v;
            }
        });
    }

    /// Solves for the dense depth map.
    pub fn solve(&self, cfg: &SolverConfig) -> Result<DepthMap> {
        let (x, stats) = pcg::solve(self, &self.rhs, cfg)?;
        log::debug!(
            "diffusion solve: {} iterations, residual {:.3e}",
            stats.iterations,
            stats.residual
        );
        Ok(DepthMap(Grid::from_vec(self.width, self.height, x)?))
    }

    /// Solves `A x = b` for an arbitrary right-hand side.
    pub fn solve_rhs(&self, b: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SolveStats)> {
        if b.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} entries, system has {}",
                b.len(),
                self.len()
            )));
        }
        pcg::solve(self, b, cfg)
    }

    /// Back-propagates `dL/dD` through the solve, given the forward
    /// solution `depth`.
    pub fn solve_adjoint(
        &self,
        depth: &DepthMap,
        grad_depth: &Grid,
        cfg: &SolverConfig,
    ) -> Result<DiffusionGrads> {
        let (w, h) = (self.width, self.height);
        for g in [&**depth, grad_depth] {
            if g.width() != w || g.height() != h {
                return Err(Error::DimensionMismatch(format!(
                    "adjoint input is {}x{}, system is {w}x{h}",
                    g.width(),
                    g.height()
                )));
            }
        }
        let (u, _) = self.solve_rhs(grad_depth.as_slice(), cfg)?;
        let d = depth.as_slice();
        let labels = Grid::from_fn(w, h, |x, y| {
            let p = y * w + x;
            self.lambda[p] * u[p]
        });
        let weights = Grid::from_fn(w, h, |x, y| {
            let p = y * w + x;
            u[p] * (self.labels[p] - d[p])
        });
        // dL/d(edge pq) = −(u_p − u_q)(D_p − D_q); each endpoint owns half.
        let mut dtheta = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                for q in [(x + 1 < w).then(|| p + 1), (y + 1 < h).then(|| p + w)]
                    .into_iter()
                    .flatten()
                {
                    let g = -0.5 * (u[p] - u[q]) * (d[p] - d[q]);
                    dtheta[p] += g;
                    dtheta[q] += g;
                }
            }
        }
        let q = Grid::from_fn(w, h, |x, y| {
            let p = y * w + x;
            -self.theta[p] * dtheta[p]
        });
        Ok(DiffusionGrads { labels, weights, q })
    }
}
