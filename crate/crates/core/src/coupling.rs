//! Market coupling: aggregates of a population state, the relaxed price
//! update and the Picard loop that certifies an equilibrium.

use serde::{Deserialize, Serialize};

use crate::error::{Error, IterationResidual, Result};
use crate::grid::{reserves_integral, stieltjes_sum, GridSpec, Surface};
use crate::hjb::{solve_hjb, ControlField, HjbSolution, PricePath, ValueSurface};
use crate::model::{positive_part, LambdaSchedule, ModelParams};
use crate::transport::{solve_transport, ReservesDistribution};

const CLEARING_TOL: f64 = 1e-10;

/// Population aggregates on the time nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub production: Vec<f64>,
    pub discovery: Vec<f64>,
    pub reserves: Vec<f64>,
    pub exhausted: Vec<f64>,
    /// Demand-implied price `L - Q`.
    pub price: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub value: ValueSurface,
    pub controls: ControlField,
    pub distribution: ReservesDistribution,
    pub aggregates: Aggregates,
    /// Price path the accepted best responses were computed against.
    pub price: PricePath,
    /// Number of best-response solves performed.
    pub iterations: usize,
    pub residual_history: Vec<IterationResidual>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight on the demand-implied price in the update.
    pub relaxation: f64,
    /// Constant starting price.
    pub initial_price: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            relaxation: 0.5,
            initial_price: 3.0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("solver.tol", "must be > 0"));
        }
        if self.max_iter < 2 {
            return Err(Error::invalid("solver.max_iter", "must be >= 2"));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::invalid("solver.relaxation", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// `Σ_{m=0}^{M-1} f_m (η_m − η_{m+1})`: the Stieltjes sum including the atom at the origin.
fn sum_with_atom(f: &[f64], eta: &[f64]) -> f64 {
    (0..eta.len() - 1)
        .map(|m| f[m] * (eta[m] - eta[m + 1]))
        .sum()
}

pub fn aggregate_quantities(
    controls: &ControlField,
    distribution: &ReservesDistribution,
    schedule: &LambdaSchedule,
    params: &ModelParams,
    grid: &GridSpec,
) -> Aggregates {
    aggregate_with(controls, distribution, params, grid, |t| {
        params.discovery_size * schedule.rate_at(t)
    })
}

/// Shared by the stochastic and fluid models; `flux(t)` is the reserves added
/// per unit of effort per unit time.
pub(crate) fn aggregate_with(
    controls: &ControlField,
    distribution: &ReservesDistribution,
    params: &ModelParams,
    grid: &GridSpec,
    flux: impl Fn(f64) -> f64,
) -> Aggregates {
    let nt = grid.nt();
    let mut agg = Aggregates {
        production: Vec::with_capacity(nt),
        discovery: Vec::with_capacity(nt),
        reserves: Vec::with_capacity(nt),
        exhausted: distribution.pi.clone(),
        price: Vec::with_capacity(nt),
    };
    for n in 0..nt {
        let eta = distribution.eta.row(n);
        let q = sum_with_atom(controls.production.row(n), eta);
        let a = flux(grid.t(n)) * sum_with_atom(controls.exploration.row(n), eta);
        agg.production.push(q);
        agg.discovery.push(a);
        agg.reserves.push(reserves_integral(eta, grid.dx));
        agg.price.push(params.inverse_demand(q));
    }
    agg
}

/// Solves the market-clearing equation
/// `Q = Σ (L − κ₁ − ∂v/∂x − Q)^+ / β₁ · (η_m − η_{m+1})` by bisection on `[0, L − κ₁]`.
pub fn clearing_quantity(dvdx: &[f64], eta: &[f64], params: &ModelParams) -> Result<f64> {
    params.validate()?;
    if dvdx.len() != eta.len() {
        return Err(Error::LengthMismatch {
            expected: eta.len(),
            found: dvdx.len(),
        });
    }
    let margin = params.price_cap - params.production_cost.linear;
    let beta = params.production_cost.quadratic;
    let mut integrand = vec![0.0; eta.len()];
    let mut g = |level: f64| -> Result<f64> {
        for (f, d) in integrand.iter_mut().zip(dvdx) {
            *f = positive_part(margin - d - level) / beta;
        }
        Ok(level - stieltjes_sum(&integrand, eta)?)
    };
    let (mut lo, mut hi) = (0.0, margin);
    if g(lo)? >= 0.0 {
        return Ok(0.0);
    }
    while hi - lo > CLEARING_TOL {
        let mid = 0.5 * (lo + hi);
        if g(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `p_{k+1} = (1 − ω) p_k + ω (L − Q_k)`.
pub fn update_price(
    current: &PricePath,
    production: &[f64],
    params: &ModelParams,
    relaxation: f64,
    grid: &GridSpec,
) -> Result<PricePath> {
    if production.len() != current.len() {
        return Err(Error::LengthMismatch {
            expected: current.len(),
            found: production.len(),
        });
    }
    let floor = params.production_cost.linear;
    let mut next = Vec::with_capacity(current.len());
    for (n, (p, q)) in current.values().iter().zip(production).enumerate() {
        let updated = (1.0 - relaxation) * p + relaxation * params.inverse_demand(*q);
        if !(updated > floor) {
            return Err(Error::UnprofitablePrice {
                t: grid.t(n),
                price: updated,
            });
        }
        next.push(updated);
    }
    Ok(PricePath::unchecked(next))
}

pub fn picard_solve(
    params: &ModelParams,
    schedule: &LambdaSchedule,
    eta0: &[f64],
    grid: &GridSpec,
    p0: &PricePath,
    settings: &SolverSettings,
) -> Result<EquilibriumSolution> {
    schedule.validate()?;
    fixed_point(
        params,
        grid,
        p0,
        settings,
        |price| solve_hjb(price, schedule, params, grid),
        |controls| solve_transport(controls, schedule, eta0, grid),
        |controls, dist| aggregate_quantities(controls, dist, schedule, params, grid),
    )
}

/// The Picard loop, parameterized by the best-response, transport and
/// aggregation stages.
pub(crate) fn fixed_point(
    params: &ModelParams,
    grid: &GridSpec,
    p0: &PricePath,
    settings: &SolverSettings,
    mut best_response: impl FnMut(&PricePath) -> Result<HjbSolution>,
    mut evolve: impl FnMut(&ControlField) -> Result<ReservesDistribution>,
    mut aggregate: impl FnMut(&ControlField, &ReservesDistribution) -> Aggregates,
) -> Result<EquilibriumSolution> {
    settings.validate()?;
    params.validate()?;
    if p0.len() != grid.nt() {
        return Err(Error::LengthMismatch {
            expected: grid.nt(),
            found: p0.len(),
        });
    }
    let mut price = PricePath::new(p0.values().to_vec(), params)?;
    let mut previous: Option<(Surface, Surface, PricePath)> = None;
    let mut history = Vec::new();

    for k in 1..=settings.max_iter {
        let hjb = best_response(&price)?;
        let dist = evolve(&hjb.controls)?;
        let agg = aggregate(&hjb.controls, &dist);

        if let Some((prev_value, prev_eta, prev_price)) = &previous {
            let residual = IterationResidual {
                iteration: k,
                value_delta: hjb.value.values.sup_distance(prev_value),
                distribution_delta: dist.eta.sup_distance(prev_eta),
                price_delta: sup_delta(price.values(), prev_price.values()),
            };
            log::info!(
                "picard {k}: |dv| = {:.3e}, |deta| = {:.3e}, |dp| = {:.3e}",
                residual.value_delta,
                residual.distribution_delta,
                residual.price_delta
            );
            history.push(residual);
            if residual.value_delta < settings.tol && residual.distribution_delta < settings.tol {
                return Ok(EquilibriumSolution {
                    value: hjb.value,
                    controls: hjb.controls,
                    distribution: dist,
                    aggregates: agg,
                    price,
                    iterations: k,
                    residual_history: history,
                });
            }
        }

        let next = update_price(&price, &agg.production, params, settings.relaxation, grid)?;
        log_price_trend(&price, &next, k);
        previous = Some((
            hjb.value.values,
            dist.eta,
            std::mem::replace(&mut price, next),
        ));
    }

    Err(Error::NotConverged {
        iterations: settings.max_iter,
        history,
    })
}

fn sup_delta(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

fn log_price_trend(current: &PricePath, next: &PricePath, k: usize) {
    let pairs = || current.values().iter().zip(next.values());
    let trend = if pairs().all(|(p, n)| n <= p) {
        "non-increasing"
    } else if pairs().all(|(p, n)| n >= p) {
        "non-decreasing"
    } else {
        "mixed"
    };
    log::debug!("price update after iterate {k}: {trend}");
}

/// Centered `dR/dt + Q − A` at the interior time nodes `t_1 .. t_{N-1}`.
pub fn conservation_residual(aggregates: &Aggregates, grid: &GridSpec) -> Vec<f64> {
    let r = &aggregates.reserves;
    (1..grid.time_steps)
        .map(|n| {
            (r[n + 1] - r[n - 1]) / (2.0 * grid.dt) + aggregates.production[n]
                - aggregates.discovery[n]
        })
        .collect()
}
