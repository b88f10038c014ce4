//! Particle flows (gradient, point-vortex, Newton and their noisy versions) and
//! mean-field reference solutions.

mod meanfield;
mod particles;

pub use meanfield::{
    empirical_distance, meanfield_1d_rate, meanfield_1d_solve, meanfield_radial_solve, patch_reference, radial_coulomb_distance,
    smeared_empirical_density, MeanFieldOptions, MeanFieldTrajectory, RadialTrajectory,
};
pub use particles::{
    evolve_deterministic, evolve_stochastic, DeterministicLaw, IntegrationOptions, Scheme, StochasticLaw, Trajectory,
};
