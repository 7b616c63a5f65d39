//! Nonlinear steepest-entropy-ascent dynamics for finite-dimensional quantum
//! density matrices.
//!
//! The equation of motion adds to the von Neumann commutator a dissipative
//! term that pushes the state along the direction of maximal entropy
//! increase, subject to conservation of probability, energy and any further
//! constraints. Pure states and uniform mixtures on a subspace evolve
//! unitarily; every other state relaxes toward the canonical state on its
//! support.
//!
//! Numerics propagate the state operator `gamma` with `rho = gamma gamma^dagger`,
//! so positivity is structural.

pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod export;
pub mod functionals;
pub mod linearized;
pub mod operators;
pub mod random;

pub use dynamics::{
    covariance_check, evolve, evolve_composite, evolve_interaction, rhs_composite, rhs_gamma,
    rhs_generalized, rhs_interaction, rhs_rho, rhs_tsallis, CompositeMode, IntegratorConfig,
    ModelSpec, Trajectory,
};
pub use error::{Error, Result};
pub use functionals::{ConstraintSet, EnergyFunctional, EntropyModel, MultiplierSet, SigmaPolicy};
pub use num_complex::Complex64;
pub use operators::{CMatrix, DensityMatrix, HermitianOperator, StateOperator, UnitsConfig};
