//! Forward evolution of the reserves upper CDF `η(t, x) = P(X_t >= x)` under
//! given feedback controls, with the exhausted fraction `π(t) = 1 - η(t, 0+)`
//! tracked through `η(t, x_1)`.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Surface};
use crate::hjb::ControlField;
use crate::model::{InitialDistribution, LambdaSchedule};

/// Violations up to this size are floating-point noise and get projected away.
pub const PROJECTION_TOL: f64 = 1e-12;
/// Violations beyond this size mean the scheme is unstable.
pub const VIOLATION_TOL: f64 = 1e-6;
const RIGHT_EDGE_WARN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ReservesDistribution {
    pub eta: Surface,
    /// Exhausted fraction `η(t_n, x_0) - η(t_n, x_1)`.
    pub pi: Vec<f64>,
}

impl ReservesDistribution {
    /// Differenced density `(η(x_m) - η(x_{m+1})) / dx` at `t_n`; the last entry is zero.
    pub fn density(&self, n: usize, dx: f64) -> Vec<f64> {
        differenced_density(self.eta.row(n), dx)
    }
}

pub fn differenced_density(eta: &[f64], dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; eta.len()];
    for m in 0..eta.len().saturating_sub(1) {
        out[m] = (eta[m] - eta[m + 1]) / dx;
    }
    out
}

/// Samples the initial upper CDF on the mesh, pinning `η(x_0) = 1`, `η(x_M) = 0`.
pub fn initial_slice(dist: &InitialDistribution, grid: &GridSpec) -> Result<Vec<f64>> {
    dist.validate()?;
    let mut eta: Vec<f64> = (0..grid.nx()).map(|m| dist.upper_cdf(grid.x(m))).collect();
    if eta[grid.space_intervals] > 0.0 {
        return Err(Error::invalid(
            "initial",
            "initial reserves support must lie inside [0, x_max)",
        ));
    }
    eta[0] = 1.0;
    Ok(eta)
}

/// Checks the upper-CDF invariants on one slice: `η(x_0) = 1`, `η(x_M) = 0`,
/// values in `[0, 1]`, non-increasing.
pub fn validate_slice(eta: &[f64]) -> Result<()> {
    let n = eta.len();
    if n < 2 || eta[0] != 1.0 || eta[n - 1] != 0.0 {
        return Err(Error::invalid(
            "eta",
            "must equal 1 at the origin and 0 at x_max",
        ));
    }
    if eta.iter().any(|v| !(0.0..=1.0).contains(v)) || eta.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("eta", "must be a non-increasing upper CDF"));
    }
    Ok(())
}

/// One explicit step `η(t_n, ·) -> η(t_{n+1}, ·)`.
///
/// Production enters through the forward quotient `q (η_{m+1} - η_m)/dx`;
/// discoveries through `λ Σ_j a(x_j) (η_{j-1} - η_j)` over the window
/// `j = max(m-d+1, 1) ..= m`, whose `j = 1` term is the atom `λ a(x_1) π`.
pub fn transport_step(
    eta: &[f64],
    q: &[f64],
    a: &[f64],
    lambda: f64,
    grid: &GridSpec,
    t: f64,
    out: &mut [f64],
) -> Result<()> {
    let nx = grid.nx();
    if eta.len() != nx || q.len() != nx || a.len() != nx || out.len() != nx {
        return Err(Error::LengthMismatch {
            expected: nx,
            found: eta.len().min(q.len()).min(a.len()).min(out.len()),
        });
    }
    let big_m = grid.space_intervals;
    let d = grid.jump_offset;
    let ratio = grid.dt / grid.dx;

    // prefix[m] = Σ_{j=1}^{m} a_j (η_{j-1} - η_j)
    let mut prefix = vec![0.0; nx];
    for j in 1..nx {
        prefix[j] = prefix[j - 1] + a[j] * (eta[j - 1] - eta[j]);
    }

    out[0] = 1.0;
    for m in 1..big_m {
        let courant = q[m] * ratio;
        if courant > 1.0 {
            return Err(Error::Cfl { t, courant });
        }
        let window = if m > d {
            prefix[m] - prefix[m - d]
        } else {
            prefix[m]
        };
        out[m] = eta[m] + courant * (eta[m + 1] - eta[m]) + grid.dt * lambda * window;
    }
    out[big_m] = 0.0;

    project(out, t)
}

/// Clips to `[0, 1]` and restores monotonicity by a running minimum, after
/// checking that the violations are round-off sized.
fn project(eta: &mut [f64], t: f64) -> Result<()> {
    let mut violation: f64 = 0.0;
    for m in 0..eta.len() {
        violation = violation.max(-eta[m]).max(eta[m] - 1.0);
        if m > 0 {
            violation = violation.max(eta[m] - eta[m - 1]);
        }
    }
    if violation > VIOLATION_TOL {
        return Err(Error::Monotonicity { t, violation });
    }
    if violation > 0.0 {
        let mut running = 1.0;
        for v in eta.iter_mut() {
            let clipped = v.clamp(0.0, 1.0).min(running);
            *v = clipped;
            running = clipped;
        }
        if violation > PROJECTION_TOL {
            log::debug!("projected upper-CDF violation {violation:.3e} at t = {t}");
        }
    }
    Ok(())
}

pub fn solve_transport(
    controls: &ControlField,
    schedule: &LambdaSchedule,
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
        let t = grid.t(n);
        transport_step(
            eta.row(n),
            controls.production.row(n),
            controls.exploration.row(n),
            schedule.rate_at(t),
            grid,
            t,
            &mut next,
        )?;
        eta.row_mut(n + 1).copy_from_slice(&next);
    }

    let edge = grid.space_intervals - 1;
    let worst = eta.iter_rows().map(|r| r[edge]).fold(0.0, f64::max);
    if worst > RIGHT_EDGE_WARN {
        log::warn!(
            "upper CDF reaches {worst:.3e} next to x_max = {}; the right boundary truncates mass",
            grid.x_max
        );
    }

    let pi = eta.iter_rows().map(|r| r[0] - r[1]).collect();
    Ok(ReservesDistribution { eta, pi })
}

/// Explicit step of the fluid-limit transport `∂η/∂t = (q - λδa) ∂η/∂x`.
///
/// The forward quotient is used where the net velocity `q - λδa` is
/// non-negative (reserves drain); where discoveries outpace production the
/// backward quotient keeps the step upwind.
pub(crate) fn fluid_transport_step(
    eta: &[f64],
    q: &[f64],
    a: &[f64],
    lambda_delta: f64,
    grid: &GridSpec,
    t: f64,
    out: &mut [f64],
) -> Result<()> {
    let big_m = grid.space_intervals;
    let ratio = grid.dt / grid.dx;
    out[0] = 1.0;
    for m in 1..big_m {
        let velocity = q[m] - lambda_delta * a[m];
        let courant = velocity.abs() * ratio;
        if courant > 1.0 {
            return Err(Error::Cfl { t, courant });
        }
        out[m] = if velocity >= 0.0 {
            eta[m] + courant * (eta[m + 1] - eta[m])
        } else {
            eta[m] + courant * (eta[m - 1] - eta[m])
        };
    }
    out[big_m] = 0.0;
    project(out, t)
}
