use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hierarchy::HierarchicalBasis;
use super::DiffusionSystem;
use crate::error::{Error, Result};
use crate::reduce::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    HierarchicalBasis,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative residual `‖b − Ax‖ / ‖b‖` at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 2000,
            preconditioner: Preconditioner::HierarchicalBasis,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("solver tol must be in (0, 1), got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("solver max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

enum Precond {
    Jacobi(Vec<f64>),
    Hb(HierarchicalBasis),
}

impl Precond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::Jacobi(inv) => z
                .par_iter_mut()
                .zip(r.par_iter().zip(inv.par_iter()))
                .for_each(|(z, (r, d))| *z = r * d),
            Precond::Hb(hb) => hb.apply(r, z),
        }
    }
}

pub(super) fn solve(
    sys: &DiffusionSystem,
    b: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveStats)> {
    cfg.validate()?;
    let n = sys.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let pre = match cfg.preconditioner {
        Preconditioner::Jacobi => Precond::Jacobi(sys.diagonal().iter().map(|d| 1.0 / d).collect()),
        Preconditioner::HierarchicalBasis => Precond::Hb(HierarchicalBasis::new(sys)),
    };

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    for it in 0..cfg.max_iter {
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotConverged {
                iterations: it,
                residual,
            });
        }
        let a = rz / pap;
        x.par_iter_mut()
            .zip(r.par_iter_mut())
            .zip(p.par_iter().zip(ap.par_iter()))
            .for_each(|((x, r), (p, ap))| {
                *x += a * p;
                *r -= a * ap;
            });
        residual = dot(&r, &r).sqrt() / b_norm;
        if !residual.is_finite() {
            break;
        }
        if residual <= cfg.tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it + 1,
                    residual,
                },
            ));
        }
        pre.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut()
            .zip(z.par_iter())
            .for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        residual,
    })
}
