#![allow(dead_code)]

use exploration_mfg::transport::initial_slice;
use exploration_mfg::*;

pub fn reference() -> ModelParams {
    ModelParams::reference()
}

/// Reference domain `[0, 120]` at spacing `dx` with the default time step.
pub fn grid(params: &ModelParams, dx: f64) -> GridSpec {
    GridSpec::build(params, 120.0, dx, None).unwrap()
}

pub fn parabolic_slice(grid: &GridSpec) -> Vec<f64> {
    initial_slice(&InitialDistribution::default(), grid).unwrap()
}

pub fn equilibrium(
    params: &ModelParams,
    schedule: &LambdaSchedule,
    grid: &GridSpec,
) -> EquilibriumSolution {
    let p0 = PricePath::constant(3.0, grid, params).unwrap();
    picard_solve(
        params,
        schedule,
        &parabolic_slice(grid),
        grid,
        &p0,
        &SolverSettings::default(),
    )
    .unwrap()
}

pub fn sup(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// First time node at which the exhausted fraction reaches `1 - 1e-4`.
pub fn exhaustion_time(exhausted: &[f64], grid: &GridSpec) -> Option<f64> {
    exhausted
        .iter()
        .position(|&p| p >= 1.0 - 1e-4)
        .map(|n| grid.t(n))
}
