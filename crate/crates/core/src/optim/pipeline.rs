use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Group, ParamState, Schedule};
use crate::diffusion::{assemble, DepthMap, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::loss::{supervised_loss, LossBreakdown, PhotometricLoss};
use crate::splat::{render, render_adjoint, SplatConfig};

/// Numerical settings of the forward chain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub splat: SplatConfig,
    pub solver: SolverConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.splat.validate()?;
        self.solver.validate()
    }
}

/// What the optimiser minimises.
pub enum Objective<'a> {
    /// The multi-view photometric loss.
    Photometric(&'a PhotometricLoss<'a>),
    /// Mean squared error against a reference depth map.
    Supervised(&'a Grid),
}

impl Objective<'_> {
    fn evaluate_with_grad(&self, depth: &Grid) -> Result<(LossBreakdown, Grid)> {
        match self {
            Objective::Photometric(loss) => loss.evaluate_with_grad(depth),
            Objective::Supervised(gt) => {
                let (mse, grad) = supervised_loss(depth, gt)?;
                Ok((
                    LossBreakdown {
                        total: mse,
                        ..LossBreakdown::default()
                    },
                    grad,
                ))
            }
        }
    }
}

/// Gradients of the objective for every parameter group, flattened in the
/// same order as [`ParamState::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub z: Vec<f64>,
    pub xy: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Grid,
}

impl Gradients {
    pub fn get(&self, g: Group) -> &[f64] {
        match g {
            Group::Z => &self.z,
            Group::XY => &self.xy,
            Group::R => &self.r,
            Group::Q => self.q.as_slice(),
        }
    }
}

/// Splats the current points and diffuses them.
pub fn forward(state: &ParamState, cfg: &PipelineConfig) -> Result<DepthMap> {
    let images = render(&state.points, state.width(), state.height(), &cfg.splat)?;
    assemble(&images, &state.smooth)?.solve(&cfg.solver)
}

/// Evaluates the objective and its gradient with respect to all groups.
pub fn forward_backward(
    state: &ParamState,
    objective: &Objective<'_>,
    cfg: &PipelineConfig,
) -> Result<(LossBreakdown, Gradients, DepthMap)> {
    let images = render(&state.points, state.width(), state.height(), &cfg.splat)?;
    let sys = assemble(&images, &state.smooth)?;
    let depth = sys.solve(&cfg.solver)?;
    let (breakdown, grad_depth) = objective.evaluate_with_grad(&depth)?;
    let dg = sys.solve_adjoint(&depth, &grad_depth, &cfg.solver)?;
    let pg = render_adjoint(&images, &state.points, &dg.labels, &dg.weights)?;
    let grads = Gradients {
        z: pg.iter().map(|g| g.z).collect(),
        xy: pg.iter().flat_map(|g| [g.x, g.y]).collect(),
        r: pg.iter().map(|g| g.log_weight).collect(),
        q: dg.q,
    };
    Ok((breakdown, grads, depth))
}

/// Loss terms recorded at one optimisation iteration, before its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub group: Group,
    pub e_theta: f64,
    pub e_s: f64,
    pub e_ssim: f64,
    pub reward: f64,
    pub total: f64,
}

pub struct RunOutput {
    pub state: ParamState,
    pub depth: DepthMap,
    pub trace: Vec<TraceRow>,
}

/// Runs the alternating schedule. With zero passes this is the plain
/// diffusion of the initial points.
pub fn run(
    mut state: ParamState,
    objective: &Objective<'_>,
    schedule: &Schedule,
    cfg: &PipelineConfig,
) -> Result<RunOutput> {
    schedule.validate()?;
    cfg.validate()?;
    let mut trace = Vec::with_capacity(schedule.total_iterations());
    let mut iteration = 0;
    for pass in 0..schedule.passes {
        for &group in &schedule.groups {
            for _ in 0..schedule.iters_per_group {
                let (b, grads, _) = forward_backward(&state, objective, cfg)?;
                if !b.total.is_finite() || grads.get(group).iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        iteration,
                        group: group.to_string(),
                    });
                }
                log::debug!("pass {pass} iter {iteration} {group}: total {:.6e}", b.total);
                trace.push(TraceRow {
                    iteration,
                    group,
                    e_theta: b.e_theta,
                    e_s: b.e_s,
                    e_ssim: b.e_ssim,
                    reward: b.grad_reward,
                    total: b.total,
                });
                state.step(group, grads.get(group), schedule);
                iteration += 1;
            }
        }
    }
    let depth = forward(&state, cfg)?;
    Ok(RunOutput { state, depth, trace })
}

/// Writes the trace as CSV with a header row.
pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in rows {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
