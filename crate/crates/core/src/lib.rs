//! Particle methods for linear transport equations with shape functions
//! deformed by polynomial approximations of the backward characteristic flow.
//!
//! Four transport schemes share one particle data model:
//!
//! * `Tsp`: fixed-shape smoothed particles of radius `h^q`, never remapped.
//! * `Fsl`: fixed-shape particles of radius `h`, periodically remapped.
//! * `Ltp`: linearly transformed particles, `phi_h(D (x - x_k))`.
//! * `Qtp`: quadratically transformed particles with an additional
//!   Hessian term and a support restricted to where the quadratic backward
//!   map is locally invertible.
//!
//! Flow derivatives are either recomputed from pushed marker stencils
//! (`DerivativeScheme::Direct`) or composed step by step from one-step
//! finite differences of the numerical flow (`DerivativeScheme::Incremental`).

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod density;
pub mod error;
pub mod flows;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod particles;
pub mod remap;

use nalgebra::{SMatrix, SVector};

/// Spatial dimension of the harness. Particle state is laid out in terms of
/// this constant so that only array shapes change with it.
pub const DIM: usize = 2;

pub type Point = SVector<f64, DIM>;
pub type Mat = SMatrix<f64, DIM, DIM>;

/// Per-component Hessians of a vector map: `hess[i]` holds the second
/// derivatives of component `i`.
pub type Hessians = [Mat; DIM];

pub use error::{Error, Result};
pub use flows::{FlowField, ForwardFlow, InitialData, Rk4, TestCase, Velocity};
pub use grid::{EvalGrid, GridField, GridSpec};
pub use harness::{RunConfig, RunReport, Simulation};
pub use kernels::{KernelKind, ShapeKernel};
pub use particles::{DerivativeScheme, Method, ParticleSet};
pub use remap::{RemapCache, RemapEvent, RemapPolicy};

/// Matrix norm induced by the max norm: largest absolute row sum.
pub fn mat_norm_inf(m: &Mat) -> f64 {
    (0..DIM).map(|i| (0..DIM).map(|j| m[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn vec_norm_inf(v: &Point) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Evaluates the quadratic form `y^t H_i y` for each component `i`.
pub fn quad_form(hess: &Hessians, y: &Point) -> Point {
    Point::from_fn(|i, _| y.dot(&(hess[i] * y)))
}
