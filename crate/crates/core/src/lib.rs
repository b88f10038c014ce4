#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons reject NaN
//! Coulomb and log gases: energies, equilibrium measures, dynamics, Gibbs sampling,
//! lattice energies and fluctuation statistics.

pub mod config;
pub mod dynamics;
pub mod energy;
pub mod equilibrium;
pub mod error;
pub mod fluctuations;
pub mod gibbs;
pub mod grid;
pub mod kernel;
pub mod lattice;
pub mod potential;
pub mod reference;
pub mod scalar;
pub mod special;
pub mod stats;

pub use config::Configuration;
pub use error::{Error, Result};
pub use grid::{Convolver, Grid, GriddedDensity, GriddedField};
pub use kernel::{InteractionKernel, KernelFamily};
pub use potential::{ExternalPotential, TabulatedPotential};
pub use reference::{CircleLaw, MeanFieldReference, Semicircle};
pub use scalar::Scalar;

/// Default scalar type.
pub type Real = f64;
/// Double-precision configuration.
pub type Configuration64 = Configuration<f64>;
/// Single-precision configuration.
pub type Configuration32 = Configuration<f32>;
