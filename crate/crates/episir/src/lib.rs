//! Equilibrium and optimal control of a behavioral SIR epidemic.
//!
//! Non-diagnosed agents trade off activity against infection risk while a
//! vaccine arrives at an exponential time. The crate solves the social
//! planner problem, the Markov equilibrium with and without recall of
//! exposure history, static-efficient lockdown and quarantine rules, and a
//! myopic benchmark, all as stationary systems of a locally consistent
//! Markov chain on an (S, I) grid. Path simulation, welfare and death-toll
//! metrics, and calibration of the death-state utility from epidemic time
//! series sit on top.

// negated comparisons in validation code are NaN guards; index loops in the
// stencil code address several arrays at once
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibrate;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod model;
pub mod pathsim;
pub mod solvers;

pub use calibrate::{
    calibrate_u_d, case_fatality_series, load_epidemic_csv, prevalence_estimate, vsl_u_d,
    CalibrationReport, EpidemicSeries,
};
pub use error::{Error, Result};
pub use grid::{exponential_grid, uniform_grid, Field, GridSpec, StateGrid};
pub use kernel::{
    agent_stencil, boundary_cap, policy_iteration, solve_stationary, spp_stencil, BeliefRule,
    IterationConfig, SolveReport, TransitionStencil, Wiring,
};
pub use model::{
    belief_mu, cost_post_vaccine, effective_r, foc_activity, full_activity_threshold,
    inverse_utility, utility, value_known_infected, DerivedConstants, FocBranch, ModelParams,
};
pub use pathsim::{
    expected_deaths, field_along_path, herd_immunity_day, path_metrics, simulate_path,
    welfare_cost, InitialState, PathMetrics, PathSeries, PolicySource, WelfareInput,
};
pub use solvers::{
    check_static_bounds, evaluate_policy_with_reversion, solve_myopic, solve_pbe, solve_prme,
    solve_spp, static_efficient_lockdown, static_efficient_quarantine, Allocation,
    AllocationResult, Evaluation, PrmeConfig, PrmeResult, ReversionSpec, StaticBoundsReport,
};
