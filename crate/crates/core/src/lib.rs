//! Solver and analysis toolkit for the stochastic shallow-lake optimal
//! control problem: value function via a monotone finite-difference scheme,
//! optimal feedback policy, invariant density of the controlled diffusion,
//! bifurcation sweeps, path simulation and first-passage statistics.

// Negated partial-order comparisons are deliberate throughout the numerics:
// `!(x > 0.0)` must treat NaN as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod invariant;
pub mod model;
pub mod output;
pub mod sde;
pub mod solver;

pub use invariant::{
    bifurcation_sweep, find_extrema, invariant_density, phi_sigma, DriftField, InvariantDensity,
    InvariantError, MeshSpec, SolveSpec, SweepParam, SweepResult,
};
pub use model::{
    derived_constants, validate_params, DerivedConstants, LakeParams, ModelError, RecyclingRate,
    ValidatedParams,
};
pub use sde::{
    control_payoff_mc, escape_times, estimate_value_mc, feedback_benchmark_payoff, simulate_path,
    simulate_path_sampled, truncated_policy_value, Control, EscapeSample, McEstimate, PathSample,
    SdeError, SimConfig,
};
pub use solver::{
    build_grid, default_domain_length, initial_guess, jacobian, policy_from_solution, residual,
    right_boundary_value, solve, Grid, PolicyCurve, SolverError, ValueSolution,
};
