//! Alternating Adam optimisation of point depths, positions, log-weights
//! and the smoothness field through the full splat → diffuse → loss chain.

mod pipeline;

pub use pipeline::{forward, forward_backward, run, write_trace, Gradients, Objective, PipelineConfig, RunOutput, TraceRow};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffusion::SmoothnessField;
use crate::error::{Error, Result};
use crate::grid::{Grid, Image};
use crate::scene_io::ScenePoint;

/// A block of parameters optimised together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    /// Point depth labels.
    Z,
    /// Point screen positions.
    XY,
    /// Point log-weights.
    R,
    /// Smoothness field.
    Q,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Z, Group::XY, Group::R, Group::Q];

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Group::Z => "Z",
            Group::XY => "XY",
            Group::R => "R",
            Group::Q => "Q",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub z: f64,
    pub xy: f64,
    pub r: f64,
    pub q: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            z: 1e-2,
            xy: 1e-2,
            r: 1e-2,
            q: 1e-2,
        }
    }
}

impl LearningRates {
    pub fn get(&self, g: Group) -> f64 {
        match g {
            Group::Z => self.z,
            Group::XY => self.xy,
            Group::R => self.r,
            Group::Q => self.q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub groups: Vec<Group>,
    pub iters_per_group: usize,
    pub passes: usize,
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Schedule {
    /// 13 iterations per group, 5 passes over Z → XY → R → Q.
    fn default() -> Self {
        Schedule {
            groups: Group::ALL.to_vec(),
            iters_per_group: 13,
            passes: 5,
            lr: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Schedule {
    /// Longer turns of 25 iterations, as used for multi-view captures.
    pub fn long_turns() -> Self {
        Schedule {
            iters_per_group: 25,
            ..Schedule::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters_per_group == 0 {
            return Err(Error::Config("iters_per_group must be >= 1".into()));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].contains(g) {
                return Err(Error::Config(format!("group {g} listed twice")));
            }
        }
        for g in Group::ALL {
            let lr = self.lr.get(g);
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate for {g} must be >= 0, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.passes * self.groups.len() * self.iters_per_group
    }
}

/// First and second moment estimates of one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn grow(&mut self, n: usize) {
        self.m.resize(n, 0.0);
        self.v.resize(n, 0.0);
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.m.len());
    moments.step += 1;
    let t = moments.step as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
}

/// Everything the optimiser updates, plus Adam state per group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub points: Vec<ScenePoint>,
    pub smooth: SmoothnessField,
    moments: [Moments; 4],
}

impl ParamState {
    pub fn new(points: Vec<ScenePoint>, smooth: SmoothnessField) -> Self {
        let n = points.len();
        let q = smooth.q().len();
        ParamState {
            points,
            smooth,
            moments: [
                Moments::zeros(n),
                Moments::zeros(2 * n),
                Moments::zeros(n),
                Moments::zeros(q),
            ],
        }
    }

    /// Points with `R = 0` and `Q` initialised to the gradient magnitude of
    /// the central image.
    pub fn initial(points: Vec<ScenePoint>, central: &Image) -> Self {
        let points = points
            .into_iter()
            .map(|p| ScenePoint { log_weight: 0.0, ..p })
            .collect();
        ParamState::new(points, SmoothnessField::from_image(central))
    }

    pub fn moments(&self, g: Group) -> &Moments {
        &self.moments[g.slot()]
    }

    pub fn width(&self) -> usize {
        self.smooth.q().width()
    }

    pub fn height(&self) -> usize {
        self.smooth.q().height()
    }

    /// Flattened parameter values of a group.
    pub fn values(&self, g: Group) -> Vec<f64> {
        match g {
            Group::Z => self.points.iter().map(|p| p.z).collect(),
            Group::XY => self.points.iter().flat_map(|p| [p.x, p.y]).collect(),
            Group::R => self.points.iter().map(|p| p.log_weight).collect(),
            Group::Q => self.smooth.q().as_slice().to_vec(),
        }
    }

    fn set_values(&mut self, g: Group, v: &[f64]) {
        match g {
            Group::Z => self.points.iter_mut().zip(v).for_each(|(p, z)| p.z = *z),
            Group::XY => self
                .points
                .iter_mut()
                .zip(v.chunks(2))
                .for_each(|(p, xy)| (p.x, p.y) = (xy[0], xy[1])),
            Group::R => self.points.iter_mut().zip(v).for_each(|(p, r)| p.log_weight = *r),
            Group::Q => self.smooth.q_mut().as_mut_slice().copy_from_slice(v),
        }
    }

    /// Applies one Adam step to group `g`; other groups and their moments
    /// are untouched.
    pub fn step(&mut self, g: Group, grads: &[f64], sched: &Schedule) {
        let mut v = self.values(g);
        adam_step(
            &mut v,
            grads,
            &mut self.moments[g.slot()],
            sched.lr.get(g),
            sched.beta1,
            sched.beta2,
            sched.eps,
        );
        self.set_values(g, &v);
    }

    /// Appends points with fresh (zero) moments.
    pub fn add_points(&mut self, new: impl IntoIterator<Item = ScenePoint>) {
        self.points.extend(new);
        let n = self.points.len();
        self.moments[Group::Z.slot()].grow(n);
        self.moments[Group::XY.slot()].grow(2 * n);
        self.moments[Group::R.slot()].grow(n);
    }
}

/// Adds one point at every pixel whose colour gradient magnitude exceeds
/// the `percentile` quantile (e.g. 0.9), labelled from the preliminary
/// depth `depth` with `R = 0`. Returns how many were added.
pub fn augment_points(
    state: &mut ParamState,
    depth: &Grid,
    image: &Image,
    percentile: f64,
) -> Result<usize> {
    if depth.width() != image.width() || depth.height() != image.height() {
        return Err(Error::DimensionMismatch("depth and image sizes differ".into()));
    }
    if !(0.0..=1.0).contains(&percentile) {
        return Err(Error::Config(format!("percentile must be in [0, 1], got {percentile}")));
    }
    let grad = image.gradient_magnitude();
    let mut sorted = grad.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = crate::loss::quantile_sorted(&sorted, percentile);
    let w = grad.width();
    let new: Vec<ScenePoint> = grad
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > threshold)
        .map(|(p, _)| {
            let (x, y) = (p % w, p / w);
            ScenePoint::new(x as f64, y as f64, depth[(x, y)])
        })
        .collect();
    let added = new.len();
    state.add_points(new);
    Ok(added)
}

#[cfg(test)]
mod tests;
