//! Stochastic GOY/Sabra shell models: operators, small-noise SDE
//! integration, minimum-action paths and large-deviation experiments.
//!
//! Everything is generic over the scalar [`Real`] (`f32` or `f64`); the
//! `*F64` aliases below fix the common case.

pub mod action;
pub mod error;
pub mod experiments;
pub mod identities;
pub mod integrate;
pub mod noise;
pub mod operators;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod shell_space;

pub use action::{
    action_gradient, action_value, minimize_action, penalized_objective, rate_function,
    ActionProblem, ActionResult, ControlPath, RateRow, Target, TraceRow,
};
pub use error::{Error, Result};
pub use experiments::{
    ldp_check, rare_event_probability, verify_energy_estimates, weak_convergence_study,
    EnergyReport, EnsembleSpec, Estimator, LdpTable, RareEventEstimate, SphereEvent, WeakReport,
};
pub use identities::{identity_suite, IdentityReport, IdentitySettings};
pub use integrate::{
    energy_budget, integrate_controlled_sde, integrate_sde, integrate_sde_with_increments,
    integrate_skeleton, integrate_skeleton_euler, EnergyBudget, Forcing, Model, TimeGrid,
    Trajectory,
};
pub use noise::{
    check_noise_hypotheses, CovarianceSpec, NoiseCoefficient, NoiseHypothesesReport,
    WienerConvention,
};
pub use operators::{
    apply_a, apply_b, apply_b_general, apply_b_sabra, drift_f, estimate_operator_constants,
    OperatorConstantsReport,
};
pub use scalar::Real;
pub use shell_space::{ModelParams, NormKind, ShellState, Variant};

pub type ShellStateF64 = ShellState<f64>;
pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelF64 = Model<f64>;
pub type TimeGridF64 = TimeGrid<f64>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type ControlPathF64 = ControlPath<f64>;
pub type CovarianceSpecF64 = CovarianceSpec<f64>;
pub type NoiseCoefficientF64 = NoiseCoefficient<f64>;
pub type ForcingF64 = Forcing<f64>;
pub type ActionProblemF64 = ActionProblem<f64>;
pub type ActionResultF64 = ActionResult<f64>;
pub type EnsembleSpecF64 = EnsembleSpec<f64>;
