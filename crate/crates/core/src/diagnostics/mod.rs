//! Numerical probes of the oscillator model: energy profiles, exact
//! Jacobians, gradient bounds and perturbation analysis.

pub mod bounds;
pub mod energy;
pub mod perturbation;
pub mod scalar;
pub mod sweep;

pub use bounds::{
    gradient_bound_check, gradient_bound_terms, hidden_state_bound_check, leading_order_gradient,
    leading_order_residual, GradientBoundReport, GradientBoundTerms, HiddenStateReport, LeadingOrderForm,
};
pub use energy::{classify_energies, dirichlet_profile, energy_functional, lsq_slope, EnergyReport};
pub use perturbation::{perturbation_decay_rate, perturbation_identity_check, PerturbationIdentityReport};
pub use scalar::{ScalarModel, ScalarTape, ScalarTrajectory, ScalarVariant};
pub use sweep::{depth_gradient_sweep, ring_with_chords, DepthGradientRow, DepthSweepSpec, StepMode};
