//! Cournot mean-field games of exhaustible-resource production with
//! stochastic exploration: finite-difference HJB and transport solvers, the
//! Picard equilibrium loop, stationary and fluid-limit analyses, and a Monte
//! Carlo oracle for cross-validation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coupling;
pub mod error;
pub mod export;
pub mod fluid;
pub mod grid;
pub mod hjb;
pub mod mc_oracle;
pub mod model;
pub mod stationary;
pub mod transport;

pub use coupling::{
    aggregate_quantities, clearing_quantity, conservation_residual, picard_solve, update_price,
    Aggregates, EquilibriumSolution, SolverSettings,
};
pub use error::{Error, IterationResidual, Result};
pub use fluid::{
    epsilon_sweep, fluid_boundary, fluid_stationary_closed_form, solve_fluid, EpsilonRow,
    FluidConfig, FluidStationary, RowSource,
};
pub use grid::{stieltjes_sum, GridSpec, Surface};
pub use hjb::{solve_hjb, ControlField, HjbSolution, PricePath, ValueSurface};
pub use mc_oracle::{policy_value_estimate, simulate_ensemble, ParticleEnsemble, SimConfig};
pub use model::{InitialDistribution, LambdaSchedule, ModelParams, QuadraticCost};
pub use stationary::{lambda_sweep, solve_stationary, StationarySolution, SweepRow};
pub use transport::{solve_transport, transport_step, ReservesDistribution};
