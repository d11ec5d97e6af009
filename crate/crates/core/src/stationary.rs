//! Stationary equilibria with a constant discovery rate, extracted from the
//! midpoint of a long-horizon time-dependent solve.

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{picard_solve, EquilibriumSolution, SolverSettings};
use crate::error::{Error, Result};
use crate::grid::{backward_difference, GridSpec};
use crate::hjb::{hjb_rhs, saturation_of_slice, PricePath};
use crate::model::{InitialDistribution, LambdaSchedule, ModelParams};
use crate::transport::initial_slice;

/// Largest relative variation of `Q(t)` over `[0.3T, 0.7T]` accepted as a plateau.
pub const PLATEAU_TOL: f64 = 0.01;
const PLATEAU_FLOOR: f64 = 1e-6;
const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct StationarySolution {
    pub lambda: f64,
    /// Time of the extracted slice.
    pub time: f64,
    pub value: Vec<f64>,
    pub eta: Vec<f64>,
    pub exhausted: f64,
    pub production: f64,
    pub discovery: f64,
    pub reserves: f64,
    pub price: f64,
    pub saturation: f64,
    /// Relative variation of `Q(t)` over `[0.3T, 0.7T]`.
    pub plateau_variation: f64,
    pub plateau_ok: bool,
    /// Sup-norm of the stationary HJB residual on the slice.
    pub hjb_residual: f64,
    pub iterations: usize,
}

pub fn solve_stationary(
    lambda: f64,
    params: &ModelParams,
    initial: &InitialDistribution,
    grid: &GridSpec,
    settings: &SolverSettings,
) -> Result<StationarySolution> {
    let (solution, _) = solve_stationary_full(lambda, params, initial, grid, settings)?;
    Ok(solution)
}

/// Like [`solve_stationary`], also returning the underlying time-dependent equilibrium.
pub fn solve_stationary_full(
    lambda: f64,
    params: &ModelParams,
    initial: &InitialDistribution,
    grid: &GridSpec,
    settings: &SolverSettings,
) -> Result<(StationarySolution, EquilibriumSolution)> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be >= 0"));
    }
    let schedule = LambdaSchedule::constant(lambda);
    let eta0 = initial_slice(initial, grid)?;
    let p0 = PricePath::constant(settings.initial_price, grid, params)?;
    let eq = picard_solve(params, &schedule, &eta0, grid, &p0, settings)?;
    let stationary = extract_stationary(&eq, lambda, params, grid);
    Ok((stationary, eq))
}

/// Slices a constant-rate equilibrium at the node nearest `T/2`.
pub fn extract_stationary(
    eq: &EquilibriumSolution,
    lambda: f64,
    params: &ModelParams,
    grid: &GridSpec,
) -> StationarySolution {
    let n = grid.nearest_time_index(0.5 * grid.horizon());
    let agg = &eq.aggregates;
    let value = eq.value.values.row(n).to_vec();

    let plateau_variation = plateau_variation(&agg.production, grid);
    let plateau_ok = plateau_variation < PLATEAU_TOL;
    if !plateau_ok {
        log::warn!(
            "production varies by {:.2}% over [0.3T, 0.7T] at lambda = {lambda}; the horizon may be too short",
            100.0 * plateau_variation
        );
    }

    let mut residual = vec![0.0; grid.nx()];
    hjb_rhs(&value, agg.price[n], lambda, params, grid, &mut residual);
    let hjb_residual = residual[1..=grid.space_intervals - grid.jump_offset]
        .iter()
        .fold(0.0, |acc: f64, r| acc.max(r.abs()));
    log::info!("stationary HJB residual on the slice at lambda = {lambda}: {hjb_residual:.3e}");

    StationarySolution {
        lambda,
        time: grid.t(n),
        eta: eq.distribution.eta.row(n).to_vec(),
        exhausted: agg.exhausted[n],
        production: agg.production[n],
        discovery: agg.discovery[n],
        reserves: agg.reserves[n],
        price: agg.price[n],
        saturation: saturation_of_slice(eq.controls.exploration.row(n), grid),
        plateau_variation,
        plateau_ok,
        hjb_residual,
        iterations: eq.iterations,
        value,
    }
}

/// `(max − min) / mean` of a series over `[0.3T, 0.7T]`, with the mean floored
/// so that an exhausted market reads as flat.
fn plateau_variation(series: &[f64], grid: &GridSpec) -> f64 {
    let horizon = grid.horizon();
    let lo = grid.nearest_time_index(0.3 * horizon);
    let hi = grid.nearest_time_index(0.7 * horizon);
    let window = &series[lo..=hi];
    let max = window.iter().cloned().fold(f64::MIN, f64::max);
    let min = window.iter().cloned().fold(f64::MAX, f64::min);
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    (max - min) / mean.abs().max(PLATEAU_FLOOR)
}

/// `ṽ(0) = sup_{a ≥ 0} (a λ ṽ(δ) − C_a(a)) / (r + a λ)`.
pub fn stationary_boundary_value(v_delta: f64, params: &ModelParams, lambda: f64) -> Result<f64> {
    params.validate()?;
    if !(v_delta >= 0.0) {
        return Err(Error::invalid("v_delta", "must be >= 0"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be >= 0"));
    }
    let r = params.discount_rate;
    let objective =
        |a: f64| (a * lambda * v_delta - params.exploration_cost.eval(a)) / (r + a * lambda);
    let upper = lambda * v_delta / params.exploration_cost.quadratic + 1.0;
    let best = golden_section_max(objective, 0.0, upper);
    Ok(objective(best).max(objective(0.0)))
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// One row of a discovery-rate sweep; failures are kept per row.
#[derive(Debug)]
pub struct SweepRow {
    pub lambda: f64,
    pub outcome: std::result::Result<StationarySolution, Error>,
}

/// Stationary solves for each rate, run on a pool of `jobs` worker threads.
pub fn lambda_sweep(
    lambdas: &[f64],
    params: &ModelParams,
    initial: &InitialDistribution,
    grid: &GridSpec,
    settings: &SolverSettings,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    Ok(pool.install(|| {
        lambdas
            .par_iter()
            .map(|&lambda| SweepRow {
                lambda,
                outcome: solve_stationary(lambda, params, initial, grid, settings),
            })
            .collect()
    }))
}

/// Differenced density of the stationary slice.
pub fn stationary_density(solution: &StationarySolution, dx: f64) -> Vec<f64> {
    crate::transport::differenced_density(&solution.eta, dx)
}

/// Spatial slope of the stationary value function.
pub fn stationary_marginal_value(solution: &StationarySolution, dx: f64) -> Vec<f64> {
    backward_difference(&solution.value, dx)
}
