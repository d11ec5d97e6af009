//! Fluid limit: discoveries become a deterministic reserves flow `λδa`, the
//! jump term of the HJB equation becomes a derivative and the transport
//! equation loses its non-local source.

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{aggregate_with, fixed_point, EquilibriumSolution, SolverSettings};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Surface};
use crate::hjb::{integrate_backward, ControlField, HjbSolution, PricePath, ValueSurface};
use crate::model::{positive_part, InitialDistribution, LambdaSchedule, ModelParams};
use crate::stationary::solve_stationary;
use crate::transport::{fluid_transport_step, initial_slice, validate_slice, ReservesDistribution};

/// A point on the path from the stochastic model (`epsilon = 1`) to the
/// fluid limit (`epsilon = 0`): rate `λ/ε`, discovery size `δε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluidConfig {
    pub params: ModelParams,
    pub lambda: f64,
    pub epsilon: f64,
}

impl FluidConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        self.params.validate()?;
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", "must be >= 0"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon", "must be >= 0"));
        }
        if self.epsilon > 0.0 && self.params.discovery_size * self.epsilon < grid.dx * (1.0 - 1e-9)
        {
            return Err(Error::invalid(
                "epsilon",
                format!(
                    "scaled discovery size {} is below dx = {}",
                    self.params.discovery_size * self.epsilon,
                    grid.dx
                ),
            ));
        }
        Ok(())
    }

    /// Model parameters with the discovery size scaled by `epsilon`.
    pub fn scaled_params(&self) -> ModelParams {
        ModelParams {
            discovery_size: self.params.discovery_size * self.epsilon,
            ..self.params
        }
    }

    pub fn scaled_schedule(&self) -> LambdaSchedule {
        LambdaSchedule::scaled(LambdaSchedule::constant(self.lambda), self.epsilon)
    }
}

/// Closed-form behaviour of a producer with no reserves in the fluid limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidBoundary {
    /// `v_0(t_n, 0)`.
    pub value: Vec<f64>,
    /// `∂v_0/∂x(t_n, 0)`.
    pub slope: Vec<f64>,
    pub exploration: Vec<f64>,
    pub production: Vec<f64>,
}

/// Boundary controls at a given price: exploration exactly replaces
/// production, `q = λδa`, when that is profitable and both vanish otherwise.
fn boundary_controls(price: f64, params: &ModelParams, flux: f64) -> (f64, f64) {
    let b1 = params.production_cost.quadratic;
    let b2 = params.exploration_cost.quadratic;
    let a = positive_part(
        flux * (price - params.production_cost.linear) - params.exploration_cost.linear,
    ) / (b1 * flux * flux + b2);
    (flux * a, a)
}

pub fn fluid_boundary(
    price: &PricePath,
    params: &ModelParams,
    lambda: f64,
    grid: &GridSpec,
) -> Result<FluidBoundary> {
    params.validate()?;
    if price.len() != grid.nt() {
        return Err(Error::LengthMismatch {
            expected: grid.nt(),
            found: price.len(),
        });
    }
    let flux = lambda * params.discovery_size;
    let (k1, b1) = (
        params.production_cost.linear,
        params.production_cost.quadratic,
    );
    let (k2, b2) = (
        params.exploration_cost.linear,
        params.exploration_cost.quadratic,
    );
    let denom = b1 * flux * flux + b2;

    let nt = grid.nt();
    let mut out = FluidBoundary {
        value: vec![0.0; nt],
        slope: Vec::with_capacity(nt),
        exploration: Vec::with_capacity(nt),
        production: Vec::with_capacity(nt),
    };
    let mut running = Vec::with_capacity(nt);
    for &p in price.values() {
        let (q, a) = boundary_controls(p, params, flux);
        out.slope.push((b2 * (p - k1) + b1 * flux * k2) / denom);
        out.production.push(q);
        out.exploration.push(a);
        // running profit p q − C_q(q) − C_a(a) at the first-order conditions
        running.push(0.5 * (b1 * q * q + b2 * a * a));
    }

    // v(t_n) = ∫_{t_n}^{t_{n+1}} g(s) e^{-r(s - t_n)} ds + e^{-r dt} v(t_{n+1}), trapezoid per step
    let decay = (-params.discount_rate * grid.dt).exp();
    for n in (0..grid.time_steps).rev() {
        out.value[n] =
            0.5 * grid.dt * (running[n] + decay * running[n + 1]) + decay * out.value[n + 1];
    }
    Ok(out)
}

/// Fluid-limit HJB with a Dirichlet row at the origin taken from the closed form.
pub fn solve_fluid_hjb(
    price: &PricePath,
    params: &ModelParams,
    lambda: f64,
    grid: &GridSpec,
) -> Result<HjbSolution> {
    let boundary = fluid_boundary(price, params, lambda, grid)?;
    let flux = lambda * params.discovery_size;
    let prod = params.production_cost;
    let expl = params.exploration_cost;
    let r = params.discount_rate;
    let inv_dx = 1.0 / grid.dx;
    let p = price.values();
    let b = &boundary.value;

    let values = integrate_backward(grid, |stage, v, out| {
        out[0] = (b[stage.upper] - b[stage.upper - 1]) / grid.dt;
        let price = stage.interp(p);
        for m in 1..v.len() {
            let (back, ahead) = upwind_slopes(v, m, inv_dx);
            out[m] = r * v[m] - prod.max_surplus(price - back) - expl.max_surplus(flux * ahead);
        }
    })?;

    let mut controls = ControlField::zeros(grid);
    for n in 0..grid.nt() {
        let v = values.row(n);
        controls.production.set(n, 0, boundary.production[n]);
        controls.exploration.set(n, 0, boundary.exploration[n]);
        for m in 1..v.len() {
            let (back, ahead) = upwind_slopes(v, m, inv_dx);
            controls
                .production
                .set(n, m, prod.best_response(p[n] - back));
            controls
                .exploration
                .set(n, m, expl.best_response(flux * ahead));
        }
    }
    Ok(HjbSolution {
        value: ValueSurface { values },
        controls,
    })
}

/// Slopes seen by the draining and the discovering drift: the backward and
/// the forward quotient (backward again at `x_max`).
fn upwind_slopes(v: &[f64], m: usize, inv_dx: f64) -> (f64, f64) {
    let back = (v[m] - v[m - 1]) * inv_dx;
    let ahead = if m + 1 < v.len() {
        (v[m + 1] - v[m]) * inv_dx
    } else {
        back
    };
    (back, ahead)
}

pub fn solve_fluid_transport(
    controls: &ControlField,
    flux: f64,
    eta0: &[f64],
    grid: &GridSpec,
) -> Result<ReservesDistribution> {
    validate_slice(eta0)?;
    if eta0.len() != grid.nx() {
        return Err(Error::LengthMismatch {
            expected: grid.nx(),
            found: eta0.len(),
        });
    }
    let mut eta = Surface::on_grid(grid);
    eta.row_mut(0).copy_from_slice(eta0);
    let mut next = vec![0.0; grid.nx()];
    for n in 0..grid.time_steps {
        fluid_transport_step(
            eta.row(n),
            controls.production.row(n),
            controls.exploration.row(n),
            flux,
            grid,
            grid.t(n),
            &mut next,
        )?;
        eta.row_mut(n + 1).copy_from_slice(&next);
    }
    let pi = eta.iter_rows().map(|r| r[0] - r[1]).collect();
    Ok(ReservesDistribution { eta, pi })
}

/// Picard loop of the fluid-limit game.
pub fn solve_fluid(
    p0: &PricePath,
    params: &ModelParams,
    lambda: f64,
    eta0: &[f64],
    grid: &GridSpec,
    settings: &SolverSettings,
) -> Result<EquilibriumSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be >= 0"));
    }
    let flux = lambda * params.discovery_size;
    fixed_point(
        params,
        grid,
        p0,
        settings,
        |price| solve_fluid_hjb(price, params, lambda, grid),
        |controls| solve_fluid_transport(controls, flux, eta0, grid),
        |controls, dist| aggregate_with(controls, dist, params, grid, |_| flux),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluidStationary {
    pub production: f64,
    pub price: f64,
    /// Exploration effort of a producer with no reserves.
    pub exploration_at_zero: f64,
    pub reserves: f64,
    pub exhausted: f64,
}

/// Stationary fluid-limit equilibrium: every producer sits at zero reserves
/// and explores exactly enough to sustain its production.
pub fn fluid_stationary_closed_form(params: &ModelParams, lambda: f64) -> Result<FluidStationary> {
    params.validate()?;
    let flux = lambda * params.discovery_size;
    if !(flux > 0.0) {
        return Err(Error::invalid(
            "lambda",
            "lambda * discovery_size must be > 0",
        ));
    }
    let production = positive_part(
        (params.price_cap - params.production_cost.linear) * flux - params.exploration_cost.linear,
    ) / (params.exploration_cost.quadratic
        + (1.0 + params.production_cost.quadratic) * flux);
    Ok(FluidStationary {
        production,
        price: params.inverse_demand(production),
        exploration_at_zero: production / flux,
        reserves: 0.0,
        exhausted: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowSource {
    ClosedForm,
    Numerical,
}

impl RowSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowSource::ClosedForm => "closed-form",
            RowSource::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonSummary {
    pub production: f64,
    pub reserves: f64,
    pub exhausted: f64,
    pub price: f64,
}

#[derive(Debug)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub source: RowSource,
    pub outcome: std::result::Result<EpsilonSummary, Error>,
}

/// Stationary production and reserves along the ε path. Each positive ε
/// yields one numerical row; ε = 0 yields the closed form followed by the
/// numerical fluid-limit solve.
pub fn epsilon_sweep(
    epsilons: &[f64],
    params: &ModelParams,
    lambda: f64,
    initial: &InitialDistribution,
    grid: &GridSpec,
    settings: &SolverSettings,
    jobs: usize,
) -> Result<Vec<EpsilonRow>> {
    let mut tasks = Vec::new();
    for &epsilon in epsilons {
        if epsilon == 0.0 {
            tasks.push((epsilon, RowSource::ClosedForm));
        }
        tasks.push((epsilon, RowSource::Numerical));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(epsilon, source)| EpsilonRow {
                epsilon,
                source,
                outcome: epsilon_row(epsilon, source, params, lambda, initial, grid, settings),
            })
            .collect()
    }))
}

fn epsilon_row(
    epsilon: f64,
    source: RowSource,
    params: &ModelParams,
    lambda: f64,
    initial: &InitialDistribution,
    grid: &GridSpec,
    settings: &SolverSettings,
) -> Result<EpsilonSummary> {
    let config = FluidConfig {
        params: *params,
        lambda,
        epsilon,
    };
    config.validate(grid)?;
    match source {
        RowSource::ClosedForm => {
            let s = fluid_stationary_closed_form(params, lambda)?;
            Ok(EpsilonSummary {
                production: s.production,
                reserves: s.reserves,
                exhausted: s.exhausted,
                price: s.price,
            })
        }
        RowSource::Numerical if epsilon == 0.0 => {
            let eta0 = initial_slice(initial, grid)?;
            let p0 = PricePath::constant(settings.initial_price, grid, params)?;
            let eq = solve_fluid(&p0, params, lambda, &eta0, grid, settings)?;
            let n = grid.nearest_time_index(0.5 * grid.horizon());
            Ok(EpsilonSummary {
                production: eq.aggregates.production[n],
                reserves: eq.aggregates.reserves[n],
                exhausted: eq.aggregates.exhausted[n],
                price: eq.aggregates.price[n],
            })
        }
        RowSource::Numerical => {
            let scaled = config.scaled_params();
            let rate = config
                .scaled_schedule()
                .as_constant()
                .expect("scaled constant schedule is constant");
            let scaled_grid = grid.rebuild_for(&scaled)?;
            let s = solve_stationary(rate, &scaled, initial, &scaled_grid, settings)?;
            Ok(EpsilonSummary {
                production: s.production,
                reserves: s.reserves,
                exhausted: s.exhausted,
                price: s.price,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_reference_values() {
        let s = fluid_stationary_closed_form(&ModelParams::reference(), 1.0).unwrap();
        assert!((s.production - 1.6).abs() < 1e-12);
        assert!((s.price - 3.4).abs() < 1e-12);
        assert!((s.exploration_at_zero - 1.6).abs() < 1e-12);
        assert_eq!((s.reserves, s.exhausted), (0.0, 1.0));
    }

    #[test]
    fn closed_form_clamps_when_exploration_does_not_pay() {
        let mut p = ModelParams::reference();
        p.exploration_cost.linear = 10.0;
        assert_eq!(
            fluid_stationary_closed_form(&p, 1.0).unwrap().production,
            0.0
        );
        assert!(fluid_stationary_closed_form(&p, 0.0).is_err());
    }

    #[test]
    fn boundary_controls_at_price_three() {
        let p = ModelParams::reference();
        let g = GridSpec::build(&p, 4.0, 0.1, None).unwrap();
        let price = PricePath::constant(3.0, &g, &p).unwrap();
        let b = fluid_boundary(&price, &p, 1.0, &g).unwrap();
        for n in 0..g.nt() {
            assert!((b.slope[n] - 1.5).abs() < 1e-12);
            assert!((b.exploration[n] - 1.4).abs() < 1e-12);
            assert!((b.production[n] - 1.4).abs() < 1e-12);
        }
        assert_eq!(b.value[g.time_steps], 0.0);
    }

    #[test]
    fn scaled_config() {
        let c = FluidConfig {
            params: ModelParams::reference(),
            lambda: 1.0,
            epsilon: 0.25,
        };
        assert_eq!(c.scaled_params().discovery_size, 0.25);
        assert_eq!(c.scaled_schedule().as_constant(), Some(4.0));
        let g = GridSpec::build(&c.params, 4.0, 0.5, None).unwrap();
        assert!(c.validate(&g).is_err());
    }
}
