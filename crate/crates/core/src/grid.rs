//! Uniform space-time mesh and the quadratures taken against an upper CDF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

const INTEGRALITY_TOL: f64 = 1e-9;

/// Uniform mesh `x_m = m dx` (m = 0..=M) and `t_n = n dt` (n = 0..=N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_max: f64,
    pub dx: f64,
    /// M, the number of space intervals.
    pub space_intervals: usize,
    pub dt: f64,
    /// N, the number of time steps.
    pub time_steps: usize,
    /// Jump offset d = floor(δ/dx): the mesh shift of one discovery.
    pub jump_offset: usize,
}

impl GridSpec {
    /// Time step used when none is requested: Courant number 1/2 against the
    /// production bound.
    pub fn default_dt(params: &ModelParams, dx: f64) -> f64 {
        0.5 * dx / params.max_production_rate()
    }

    /// Builds and validates the mesh. `dt` is an upper bound: the actual step
    /// is `T / ceil(T / dt)` so that the time grid ends exactly at the horizon.
    pub fn build(params: &ModelParams, x_max: f64, dx: f64, dt: Option<f64>) -> Result<Self> {
        params.validate()?;
        if !(dx > 0.0) {
            return Err(Error::invalid("grid.dx", "must be > 0"));
        }
        if !(x_max >= params.discovery_size) {
            return Err(Error::invalid(
                "grid.x_max",
                "must be at least one discovery size",
            ));
        }
        let requested_dt = dt.unwrap_or_else(|| Self::default_dt(params, dx));
        if !(requested_dt > 0.0) {
            return Err(Error::invalid("grid.dt", "must be > 0"));
        }

        let ratio = x_max / dx;
        let space_intervals = ratio.round() as usize;
        if (ratio - space_intervals as f64).abs() > INTEGRALITY_TOL * ratio.max(1.0) {
            return Err(Error::invalid(
                "grid.x_max",
                format!("must be an integer multiple of dx = {dx}"),
            ));
        }

        let jump_ratio = params.discovery_size / dx;
        let jump_offset = (jump_ratio + INTEGRALITY_TOL).floor() as usize;
        if jump_offset == 0 {
            return Err(Error::invalid(
                "grid.dx",
                format!(
                    "discovery size {} is smaller than one cell",
                    params.discovery_size
                ),
            ));
        }
        if (jump_ratio - jump_offset as f64).abs() > INTEGRALITY_TOL {
            log::warn!(
                "discovery size / dx = {jump_ratio} is not an integer; jumps truncate to {jump_offset} cells"
            );
        }
        if jump_offset > space_intervals {
            return Err(Error::invalid("grid.x_max", "jump offset exceeds the mesh"));
        }

        let time_steps = ((params.horizon / requested_dt) - INTEGRALITY_TOL)
            .ceil()
            .max(1.0) as usize;
        let dt = params.horizon / time_steps as f64;

        let courant = dt * params.max_production_rate() / dx;
        if courant > 1.0 {
            return Err(Error::invalid(
                "grid.dt",
                format!("CFL violated: courant number {courant:.4} > 1"),
            ));
        }

        Ok(Self {
            x_max,
            dx,
            space_intervals,
            dt,
            time_steps,
            jump_offset,
        })
    }

    /// Same mesh sizes, re-validated for different model parameters.
    pub fn rebuild_for(&self, params: &ModelParams) -> Result<Self> {
        Self::build(params, self.x_max, self.dx, Some(self.dt * (1.0 + 1e-12)))
    }

    pub fn nx(&self) -> usize {
        self.space_intervals + 1
    }

    pub fn nt(&self) -> usize {
        self.time_steps + 1
    }

    pub fn x(&self, m: usize) -> f64 {
        m as f64 * self.dx
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t(self.time_steps)
    }

    /// Index of the time node closest to `t`.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.time_steps)
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.nx()).map(|m| self.x(m)).collect()
    }

    pub fn t_nodes(&self) -> Vec<f64> {
        (0..self.nt()).map(|n| self.t(n)).collect()
    }
}

/// Row-major field on the mesh: one row per time node, one column per space node.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Surface {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn on_grid(grid: &GridSpec) -> Self {
        Self::zeros(grid.nt(), grid.nx())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.cols..(n + 1) * self.cols]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.cols..(n + 1) * self.cols]
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.data[n * self.cols + m]
    }

    pub fn set(&mut self, n: usize, m: usize, value: f64) {
        self.data[n * self.cols + m] = value;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `sup |self - other|` over the whole mesh.
    pub fn sup_distance(&self, other: &Surface) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "surfaces on different meshes"
        );
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// `Σ_{m=1}^{M-1} f(x_m) (η(x_m) − η(x_{m+1}))`: the positive-mass Stieltjes sum
/// `-∫ f dη` over the interior of the mesh.
pub fn stieltjes_sum(f: &[f64], eta: &[f64]) -> Result<f64> {
    if f.len() != eta.len() {
        return Err(Error::LengthMismatch {
            expected: eta.len(),
            found: f.len(),
        });
    }
    Ok(stieltjes_unchecked(f, eta))
}

#[inline]
pub(crate) fn stieltjes_unchecked(f: &[f64], eta: &[f64]) -> f64 {
    let n = eta.len();
    if n < 3 {
        return 0.0;
    }
    (1..n - 1).map(|m| f[m] * (eta[m] - eta[m + 1])).sum()
}

/// Trapezoid rule for `∫_0^{x_max} η(x) dx` with the left end taken at `0+`,
/// i.e. excluding the atom of exhausted producers at the origin.
pub fn reserves_integral(eta: &[f64], dx: f64) -> f64 {
    let n = eta.len();
    if n < 2 {
        return 0.0;
    }
    let interior: f64 = eta[1..n - 1].iter().sum();
    dx * (0.5 * eta[1] + interior + 0.5 * eta[n - 1])
}

/// Backward difference quotients `(v_m - v_{m-1}) / dx`; entry 0 is zero.
pub fn backward_difference(v: &[f64], dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for m in 1..v.len() {
        out[m] = (v[m] - v[m - 1]) / dx;
    }
    out
}
