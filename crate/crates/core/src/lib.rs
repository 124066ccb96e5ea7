//! Asymmetrically weighted Hermite moment methods for Vlasov–Poisson.
//!
//! The crate builds the truncated moment transport matrices, their Gram
//! matrix, and the two modifications (projection and penalization) that make
//! the truncated system conserve the discrete `L²` norm `⟨U, A U⟩`. On top of
//! that sit a Crank–Nicolson integrator and a split-step 1D1V solver.

pub mod cli;
pub mod error;
pub mod gram;
pub mod hermite_basis;
pub mod integrator;
pub mod operators;
pub mod vlasov1d;

pub use error::{Error, Result};
pub use gram::GramMatrix;
pub use hermite_basis::{BasisParams, VelocityGrid};
pub use integrator::{cn_step, weighted_norm, CrankNicolson, LinearSolverConfig, MomentVector, SolverMethod};
pub use operators::{Method, OperatorKind, StabilizationVector, TransportOperator};
pub use vlasov1d::{Diagnostics, FieldState, KineticState, SpatialGrid};
