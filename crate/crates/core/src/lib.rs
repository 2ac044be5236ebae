//! Euler time stepping for the probabilistic supercooled Stefan problem
//!
//! `X_t = X_{0-} + B_t − Λ_t`, `Λ_t = α P(inf_{s ≤ t} X_s ≤ 0)`.
//!
//! The crate provides a particle Monte Carlo engine and a deterministic
//! density-evolution engine for the discrete loss `Λ^Δ`, evaluators for the
//! explicit convergence-rate bounds and the physical jump size, and drivers
//! for convergence studies.

pub mod analysis;
pub mod curve;
pub mod density;
pub mod error;
pub mod grid;
pub mod normal;
pub mod particle;
pub mod quad;
pub mod rng;
pub mod theory;

pub use analysis::{
    convergence_study, convergence_study_with_curves, fit_rate, m1_graph_distance,
    m1_pointwise_check, rate_table_markdown, run_engine, sup_error, ConvergenceReport, Engine,
    ProbeResidual, RateFit, StudySpec,
};
pub use curve::LossCurve;
pub use density::{
    default_deficit_constant, read_two_column_csv, solve_support_bound, InitialLaw, LawKind,
    PsiForm, PsiProfile,
};
pub use error::{Error, Result};
pub use grid::{convolve_step, one_step_oracle, run_grid_scheme, GridConfig, SurvivorDensity};
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
pub use particle::{
    particle_scaling_study, run_particle_scheme, run_particle_scheme_with, ParticleConfig,
    ParticleEnsemble, ScalingPoint, ScalingStudy,
};
pub use rng::RandomStream;
pub use theory::{
    bound_constants, epsilon_window, modulus_of_continuity, physical_jump, physical_jump_size,
    psi_big, psi_big_inv, psi_tilde, psi_tilde_inv, rate_bound, simplified_bound, BoundConstants,
    JumpSize, RateBound, Regime, TabulatedSubDensity,
};
