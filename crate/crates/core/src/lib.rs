//! Branching processes in a Markovian environment.
//!
//! One individual reproduces per time step; the environment makes a Markov
//! move first and the offspring law is that of the new state. The crate
//! computes the exact quantities of the model (stationary law, mean offspring
//! `mu`, extinction matrix, fertility vector, CLT variance) and checks them
//! against a reproducible Monte Carlo engine.
//!
//! Analytic code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what the CLI and the statistical checks use.

// `!(x > 0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod genfun;
pub mod io;
pub mod matrix;
pub mod model;
pub mod scalar;
pub mod simulate;
pub mod validate;

pub use error::{AsymptoticsError, GenfunError, MatrixError, ModelError, SimError, ValidateError};
pub use matrix::{Matrix, SubstochasticMatrix};
pub use model::{BpmeModel, EnvChain, OffspringDist, TotalState};
pub use scalar::Scalar;

pub type Model = BpmeModel<f64>;
pub type Chain = EnvChain<f64>;
pub type Offspring = OffspringDist<f64>;
pub type Mat = Matrix<f64>;
pub type SubMat = SubstochasticMatrix<f64>;
pub type Extinction = genfun::ExtinctionResult<f64>;
pub type Fertility = asymptotics::FertilityVector<f64>;
pub type Variance = asymptotics::VarianceReport<f64>;
