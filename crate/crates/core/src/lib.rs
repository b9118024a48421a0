//! First-passage survival curves for one-dimensional diffusions, and the
//! inverse problem of recovering a barrier from a prescribed survival curve.
//!
//! The direct problem is solved by marching the forward (Fokker-Planck)
//! equation and killing mass at dyadic landmark times of the barrier; the
//! inverse problem is an obstacle problem for the survival distribution
//! `w(x, t) = P(no crossing before t, X_t > x)` solved by projected SOR.
//! A Monte Carlo estimator and closed-form Brownian benchmarks provide
//! independent checks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytic;
pub mod boundary;
pub mod config;
pub mod diffusion;
pub mod direct;
pub mod error;
pub mod grid;
pub mod inverse;
pub mod mc;
pub mod survival;
pub mod workflow;

pub use boundary::{Boundary, Interpolation, LandmarkSet};
pub use diffusion::{DiffusionSpec, InitialDistribution, TransitionDensity, UnitDiffusionTransform};
pub use error::{Error, Result};
pub use grid::{DensityField, Lattice, SurvivalField};
pub use survival::SurvivalCurve;
