//! Uncertainty quantification for universal differential equations:
//! hybrid mechanistic/neural ODE models, maximum-likelihood ensembles,
//! Hamiltonian Monte Carlo, variational inference and predictive bands.

pub mod ensemble;
pub mod error;
pub mod likelihood;
pub mod mcmc;
pub mod model;
pub mod ode;
pub mod optimize;
pub mod predict;
pub mod stats;
pub mod target;
pub mod vi;

pub use error::{Error, Result};
pub use likelihood::{Dataset, LikelihoodModel, NoiseKind, NoiseModel};
pub use model::{ModelOptions, ParamSpace, Scenario, UdeProblem};
pub use ode::{SolverConfig, SolverMethod, Trajectory};
pub use target::LogDensity;
