//! Representative producer's HJB equation under an exogenous price path,
//! discretized in space by the method of lines and integrated backward in
//! time with classical fixed-step RK4 on the shared time grid.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Surface};
use crate::model::{LambdaSchedule, ModelParams};

/// Exploration below this level counts as "no exploration".
pub const SATURATION_THRESHOLD: f64 = 1e-10;
const TAIL_EXPLORATION_WARN: f64 = 1e-6;

/// Market price on the time nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath(Vec<f64>);

impl PricePath {
    /// Validates `p(t_n) > κ₁` at every node.
    pub fn new(values: Vec<f64>, params: &ModelParams) -> Result<Self> {
        let floor = params.production_cost.linear;
        if let Some(n) = values.iter().position(|p| !(*p > floor)) {
            return Err(Error::invalid(
                "price",
                format!(
                    "p[{n}] = {} must exceed the linear production cost {floor}",
                    values[n]
                ),
            ));
        }
        Ok(Self(values))
    }

    pub fn constant(price: f64, grid: &GridSpec, params: &ModelParams) -> Result<Self> {
        Self::new(vec![price; grid.nt()], params)
    }

    pub(crate) fn unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `v(t_n, x_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub values: Surface,
}

/// Feedback controls `q(t_n, x_m)` and `a(t_n, x_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub production: Surface,
    pub exploration: Surface,
}

impl ControlField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            production: Surface::on_grid(grid),
            exploration: Surface::on_grid(grid),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub value: ValueSurface,
    pub controls: ControlField,
}

/// A Runge-Kutta stage time between `t_{upper-1}` and `t_upper`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stage {
    pub t: f64,
    pub upper: usize,
    /// Fraction of a step back from `t_upper`.
    pub back: f64,
}

impl Stage {
    /// Linear interpolation of a series stored on the time nodes.
    #[inline]
    pub fn interp(&self, series: &[f64]) -> f64 {
        let hi = series[self.upper];
        if self.back == 0.0 {
            hi
        } else {
            hi * (1.0 - self.back) + series[self.upper - 1] * self.back
        }
    }
}

/// Integrates `dv/dt = rhs(t, v)` from `v(T) = 0` down to `t = 0`.
pub(crate) fn integrate_backward<F>(grid: &GridSpec, mut rhs: F) -> Result<Surface>
where
    F: FnMut(&Stage, &[f64], &mut [f64]),
{
    let nx = grid.nx();
    let dt = grid.dt;
    let mut surface = Surface::on_grid(grid);
    let mut k1 = vec![0.0; nx];
    let mut k2 = vec![0.0; nx];
    let mut k3 = vec![0.0; nx];
    let mut k4 = vec![0.0; nx];
    let mut tmp = vec![0.0; nx];

    for n in (1..grid.nt()).rev() {
        let stage = |back: f64| Stage {
            t: grid.t(n) - back * dt,
            upper: n,
            back,
        };
        let y = surface.row(n).to_vec();

        rhs(&stage(0.0), &y, &mut k1);
        for m in 0..nx {
            tmp[m] = y[m] - 0.5 * dt * k1[m];
        }
        rhs(&stage(0.5), &tmp, &mut k2);
        for m in 0..nx {
            tmp[m] = y[m] - 0.5 * dt * k2[m];
        }
        rhs(&stage(0.5), &tmp, &mut k3);
        for m in 0..nx {
            tmp[m] = y[m] - dt * k3[m];
        }
        rhs(&stage(1.0), &tmp, &mut k4);

        let next = surface.row_mut(n - 1);
        let mut finite = true;
        for m in 0..nx {
            next[m] = y[m] - dt / 6.0 * (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m]);
            finite &= next[m].is_finite();
        }
        if !finite {
            return Err(Error::NonFinite { t: grid.t(n - 1) });
        }
    }
    Ok(surface)
}

/// Semi-discrete right-hand side `dv/dt` at one time.
///
/// Interior rows use the backward quotient for `∂v/∂x` and `v(x_{m+d}) - v(x_m)`
/// for the jump term; row 0 has no production and rows `m > M - d` no exploration.
pub fn hjb_rhs(
    v: &[f64],
    price: f64,
    lambda: f64,
    params: &ModelParams,
    grid: &GridSpec,
    out: &mut [f64],
) {
    let big_m = grid.space_intervals;
    let d = grid.jump_offset;
    let r = params.discount_rate;
    let prod = &params.production_cost;
    let expl = &params.exploration_cost;
    let inv_dx = 1.0 / grid.dx;

    out[0] = r * v[0] - expl.max_surplus(lambda * (v[d] - v[0]));
    for m in 1..=big_m {
        let marginal = price - (v[m] - v[m - 1]) * inv_dx;
        let mut dv = r * v[m] - prod.max_surplus(marginal);
        if m + d <= big_m {
            dv -= expl.max_surplus(lambda * (v[m + d] - v[m]));
        }
        out[m] = dv;
    }
}

/// First-order conditions evaluated on one time slice of the value function.
pub fn optimal_controls_from_value(
    v: &[f64],
    price: f64,
    lambda: f64,
    params: &ModelParams,
    grid: &GridSpec,
) -> (Vec<f64>, Vec<f64>) {
    let mut q = vec![0.0; v.len()];
    let mut a = vec![0.0; v.len()];
    fill_controls(v, price, lambda, params, grid, &mut q, &mut a);
    (q, a)
}

pub(crate) fn fill_controls(
    v: &[f64],
    price: f64,
    lambda: f64,
    params: &ModelParams,
    grid: &GridSpec,
    q: &mut [f64],
    a: &mut [f64],
) {
    let big_m = grid.space_intervals;
    let d = grid.jump_offset;
    let inv_dx = 1.0 / grid.dx;
    q[0] = 0.0;
    for m in 1..=big_m {
        q[m] = params
            .production_cost
            .best_response(price - (v[m] - v[m - 1]) * inv_dx);
    }
    for m in 0..=big_m {
        a[m] = if m + d <= big_m {
            params
                .exploration_cost
                .best_response(lambda * (v[m + d] - v[m]))
        } else {
            0.0
        };
    }
}

pub fn solve_hjb(
    price: &PricePath,
    schedule: &LambdaSchedule,
    params: &ModelParams,
    grid: &GridSpec,
) -> Result<HjbSolution> {
    if price.len() != grid.nt() {
        return Err(Error::LengthMismatch {
            expected: grid.nt(),
            found: price.len(),
        });
    }
    let p = price.values();
    let values = integrate_backward(grid, |stage, v, out| {
        hjb_rhs(
            v,
            stage.interp(p),
            schedule.rate_at(stage.t),
            params,
            grid,
            out,
        )
    })?;

    let mut controls = ControlField::zeros(grid);
    for n in 0..grid.nt() {
        let lambda = schedule.rate_at(grid.t(n));
        fill_controls(
            values.row(n),
            p[n],
            lambda,
            params,
            grid,
            controls.production.row_mut(n),
            controls.exploration.row_mut(n),
        );
    }
    warn_if_tail_explores(&controls, grid);

    Ok(HjbSolution {
        value: ValueSurface { values },
        controls,
    })
}

fn warn_if_tail_explores(controls: &ControlField, grid: &GridSpec) {
    let edge = grid.space_intervals - grid.jump_offset;
    let worst = controls
        .exploration
        .iter_rows()
        .map(|row| row[edge])
        .fold(0.0, f64::max);
    if worst >= TAIL_EXPLORATION_WARN {
        log::warn!(
            "exploration {worst:.3e} at x = {:.3}: x_max = {} is too small for the jump-free tail",
            grid.x(edge),
            grid.x_max
        );
    }
}

/// Smallest `x_m` beyond which exploration vanishes at the node nearest `t`;
/// `x_max` if exploration reaches the edge.
pub fn saturation_level(controls: &ControlField, grid: &GridSpec, t: f64) -> f64 {
    saturation_of_slice(controls.exploration.row(grid.nearest_time_index(t)), grid)
}

pub(crate) fn saturation_of_slice(a: &[f64], grid: &GridSpec) -> f64 {
    match a.iter().rposition(|&x| x >= SATURATION_THRESHOLD) {
        None => 0.0,
        Some(last) if last >= grid.space_intervals => grid.x_max,
        Some(last) => grid.x(last + 1),
    }
}
