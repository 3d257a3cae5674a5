//! Analytic light-field scenes with exact ground-truth disparity, used by
//! the tests, the examples and `diffdepth make-synthetic`.
//!
//! Scenes are rendered as a rectified `grid`×`grid` light field. A surface
//! point seen at central pixel `(x, y)` with disparity `d` appears in view
//! `(u, v)` at `(x + d·(u − u_c)·b, y + d·(v − v_c)·b)`; larger disparity is
//! nearer.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Image};
use crate::scene_io::{CameraModel, MultiViewSet, ScenePoint, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Constant disparity.
    FrontoParallel,
    /// A single slanted plane.
    TexturedPlane,
    /// A textured square floating in front of a textured background.
    TwoPlane,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fronto-parallel" => Ok(SceneKind::FrontoParallel),
            "textured-plane" => Ok(SceneKind::TexturedPlane),
            "two-plane" => Ok(SceneKind::TwoPlane),
            _ => Err(Error::Config(format!(
                "unknown scene '{s}' (expected fronto-parallel, textured-plane or two-plane)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub kind: SceneKind,
    pub width: usize,
    pub height: usize,
    /// Views per side of the light-field grid (odd).
    pub grid: usize,
    pub baseline: f64,
    /// Background (or only) disparity.
    pub background: f64,
    /// Foreground disparity of the two-plane scene.
    pub foreground: f64,
    /// Disparity slope per pixel along x and y for the slanted plane.
    pub slope: (f64, f64),
    pub n_points: usize,
    /// Std of Gaussian noise added to every point's label.
    pub noise: f64,
    /// Fraction of points whose label is replaced by a uniform draw over the
    /// scene's disparity range.
    pub outliers: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            kind: SceneKind::TwoPlane,
            width: 96,
            height: 96,
            grid: 3,
            baseline: 1.0,
            background: 0.5,
            foreground: 2.0,
            slope: (0.01, -0.005),
            n_points: 600,
            noise: 0.0,
            outliers: 0.2,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config("synthetic scenes need at least 8x8 pixels".into()));
        }
        if self.grid.is_multiple_of(2) {
            return Err(Error::Config(format!("grid must be odd, got {}", self.grid)));
        }
        if !(0.0..=1.0).contains(&self.outliers) {
            return Err(Error::Config(format!("outliers must be in [0, 1], got {}", self.outliers)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        for v in [self.baseline, self.background, self.foreground, self.slope.0, self.slope.1] {
            if !v.is_finite() {
                return Err(Error::Config("non-finite synthetic parameter".into()));
            }
        }
        Ok(())
    }
}

/// A generated scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub views: MultiViewSet,
    /// Ground-truth disparity of the central view.
    pub gt: Grid,
    /// Corrupted sparse points in central screen space.
    pub points: Vec<ScenePoint>,
}

fn background_texture(x: f64, y: f64, c: usize) -> f64 {
    let c = c as f64;
    0.5 + 0.18 * (0.31 * x + 0.7 * c).sin() * (0.23 * y + 0.3).cos()
        + 0.12 * (0.11 * x - 0.17 * y + 1.3 * c).sin()
        + 0.08 * (0.53 * y + 0.41 * x + c).sin()
}

fn foreground_texture(x: f64, y: f64, c: usize) -> f64 {
    let c = c as f64;
    0.45 + 0.2 * (0.45 * x + 0.9 * c + 1.0).cos() * (0.37 * y).sin()
        + 0.15 * (0.19 * y - 0.29 * x + 0.5 * c).cos()
}

struct Geometry {
    cfg: SyntheticConfig,
    /// Foreground square in central coordinates, inclusive.
    square: (f64, f64, f64, f64),
}

impl Geometry {
    fn new(cfg: SyntheticConfig) -> Self {
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        Geometry {
            cfg,
            square: (0.3 * w, 0.7 * w, 0.3 * h, 0.7 * h),
        }
    }

    fn in_square(&self, x: f64, y: f64) -> bool {
        let (x0, x1, y0, y1) = self.square;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// Disparity at central position `(x, y)`.
    fn disparity(&self, x: f64, y: f64) -> f64 {
        let c = &self.cfg;
        match c.kind {
            SceneKind::FrontoParallel => c.background,
            SceneKind::TexturedPlane => c.background + c.slope.0 * x + c.slope.1 * y,
            SceneKind::TwoPlane => {
                if self.in_square(x, y) {
                    c.foreground
                } else {
                    c.background
                }
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        let c = &self.cfg;
        match c.kind {
            SceneKind::FrontoParallel => (c.background, c.background),
            SceneKind::TwoPlane => (c.background.min(c.foreground), c.background.max(c.foreground)),
            SceneKind::TexturedPlane => {
                let (w, h) = ((c.width - 1) as f64, (c.height - 1) as f64);
                let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)].map(|(x, y)| self.disparity(x, y));
                (
                    corners.iter().cloned().fold(f64::INFINITY, f64::min),
                    corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        }
    }

    /// Colour seen at pixel `(x, y)` of the view shifted by `(su, sv)` per
    /// unit disparity.
    fn shade(&self, x: f64, y: f64, su: f64, sv: f64, c: usize) -> f64 {
        let cfg = &self.cfg;
        match cfg.kind {
            SceneKind::FrontoParallel => {
                background_texture(x - cfg.background * su, y - cfg.background * sv, c)
            }
            SceneKind::TexturedPlane => {
                // Solve x' = x + (a + b x + c y) su for the central position.
                let (a, b, e) = (cfg.background, cfg.slope.0, cfg.slope.1);
                let m = [[1.0 + b * su, e * su], [b * sv, 1.0 + e * sv]];
                let r = [x - a * su, y - a * sv];
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let cx = (r[0] * m[1][1] - m[0][1] * r[1]) / det;
                let cy = (m[0][0] * r[1] - m[1][0] * r[0]) / det;
                background_texture(cx, cy, c)
            }
            SceneKind::TwoPlane => {
                let (fx, fy) = (x - cfg.foreground * su, y - cfg.foreground * sv);
                if self.in_square(fx, fy) {
                    foreground_texture(fx, fy, c)
                } else {
                    background_texture(x - cfg.background * su, y - cfg.background * sv, c)
                }
            }
        }
    }
}

/// Generates the light field, ground truth and corrupted points.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let geo = Geometry::new(*cfg);
    let half = (cfg.grid / 2) as f64;
    let mut views = Vec::with_capacity(cfg.grid * cfg.grid);
    for vi in 0..cfg.grid {
        for ui in 0..cfg.grid {
            let (u, v) = (ui as f64, vi as f64);
            let (su, sv) = ((u - half) * cfg.baseline, (v - half) * cfg.baseline);
            let image = Image::from_fn(cfg.width, cfg.height, 3, |x, y, c| {
                geo.shade(x as f64, y as f64, su, sv, c)
            });
            views.push(View {
                name: format!("view_{ui}_{vi}"),
                image,
                camera: CameraModel::light_field(u, v, cfg.baseline)?,
            });
        }
    }
    let central = cfg.grid * cfg.grid / 2;
    let views = MultiViewSet::new(views, central)?;
    let gt = Grid::from_fn(cfg.width, cfg.height, |x, y| geo.disparity(x as f64, y as f64));
    let points = sample_points(&geo, cfg);
    Ok(SyntheticScene { views, gt, points })
}

fn sample_points(geo: &Geometry, cfg: &SyntheticConfig) -> Vec<ScenePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut points: Vec<ScenePoint> = (0..cfg.n_points)
        .map(|_| {
            let x = rng.gen_range(0.0..w - 1.0);
            let y = rng.gen_range(0.0..h - 1.0);
            ScenePoint::new(x, y, geo.disparity(x, y))
        })
        .collect();
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).expect("noise validated");
        for p in &mut points {
            p.z += normal.sample(&mut rng);
        }
    }
    let n_out = (cfg.outliers * cfg.n_points as f64).round() as usize;
    if n_out > 0 {
        let (lo, hi) = geo.range();
        let margin = 0.5 * (hi - lo).max(1.0);
        for i in sample(&mut rng, cfg.n_points, n_out) {
            points[i].z = rng.gen_range(lo - margin..hi + margin);
        }
    }
    points
}
