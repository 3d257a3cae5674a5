//! Dense depth from sparse points by differentiable splatting, screened
//! Poisson diffusion and multi-view photometric optimization.

// `!(x > 0.0)` also rejects NaN; index loops over parallel arrays are the norm.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod app;
pub mod error;
pub mod filter;
pub mod grid;
pub mod reduce;
pub mod scene_io;
pub mod splat;
pub mod diffusion;
pub mod loss;
pub mod optim;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::{Grid, Image};
