//! Rigid point cloud registration by optimizing a per-pair latent code that a
//! shared decoder turns into Euler angles and a translation, scored with the
//! Chamfer distance. ICP and direct transform optimization are included as
//! baselines.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose, and the 3x3
// kernels index by row and column.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod dataio;
pub mod decoder;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod optimizer;
