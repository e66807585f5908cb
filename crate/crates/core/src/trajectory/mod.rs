//! Learned velocity field and trajectory integration.

pub mod solver;
pub mod velocity;

pub use solver::{integrate, trajectory_variation, SolverConfig, SolverKind, VelocityFn};
pub use velocity::{BoundVelocity, VelocityField};
