//! Monte Carlo simulation of the controlled reserves process under a fixed
//! feedback control field, used as an independent check of the transport and
//! HJB solvers.
//!
//! Each particle (or payoff path) `i` draws from its own ChaCha8 stream
//! `i` under the master seed, so results do not depend on how the ensemble is
//! split across worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Surface};
use crate::hjb::{ControlField, PricePath};
use crate::model::{InitialDistribution, LambdaSchedule, ModelParams};

pub const RNG_ALGORITHM: &str = "ChaCha8";
const CHUNK: usize = 4096;
const BIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_particles: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Sub-steps per time step of the grid.
    pub substeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_particles: 100_000,
            n_paths: 20_000,
            seed: 20_240_601,
            substeps: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("sim.n_particles", self.n_particles),
            ("sim.n_paths", self.n_paths),
            ("sim.substeps", self.substeps),
        ] {
            if value == 0 {
                return Err(Error::invalid(field, "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub seed: u64,
    pub n_particles: usize,
}

#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    /// Fraction of particles with reserves `>= x_m` at `t_n`.
    pub eta: Surface,
    /// Positions at the horizon.
    pub terminal: ParticleEnsemble,
}

/// Exponential clock that fires with probability `1 - exp(-Λ)` over a
/// sub-step of integrated intensity `Λ`, at most once per sub-step.
struct JumpClock {
    rng: ChaCha8Rng,
    threshold: f64,
    hazard: f64,
}

impl JumpClock {
    fn new(mut rng: ChaCha8Rng) -> Self {
        let threshold = exp1(&mut rng);
        Self {
            rng,
            threshold,
            hazard: 0.0,
        }
    }

    #[inline]
    fn fires(&mut self, intensity: f64) -> bool {
        self.hazard += intensity;
        if self.hazard >= self.threshold {
            self.hazard = 0.0;
            self.threshold = exp1(&mut self.rng);
            true
        } else {
            false
        }
    }
}

fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln()
}

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[inline]
fn bin_of(x: f64, grid: &GridSpec) -> usize {
    ((x / grid.dx + BIN_SLACK).floor() as usize).min(grid.space_intervals)
}

fn check_controls(controls: &ControlField, grid: &GridSpec) -> Result<()> {
    for s in [&controls.production, &controls.exploration] {
        if s.rows() != grid.nt() || s.cols() != grid.nx() {
            return Err(Error::LengthMismatch {
                expected: grid.nt() * grid.nx(),
                found: s.rows() * s.cols(),
            });
        }
    }
    Ok(())
}

/// Advances a set of particles through one grid step: on each sub-step a
/// drain `X <- (X - q h)^+` followed by a possible discovery `X <- X + δ`.
/// Controls are frozen at the step's left node. A particle in the cell
/// `[x_m, x_{m+1})` drains at `q(x_m)` and explores at `a(x_{m+1})`, the same
/// pairing the transport scheme uses (so the exhausted atom explores at `a(x_1)`).
/// `on_substep` sees each particle's effective production rate and effort.
#[allow(clippy::too_many_arguments)]
fn advance(
    positions: &mut [f64],
    clocks: &mut [JumpClock],
    n: usize,
    controls: &ControlField,
    rates: &[f64],
    jump: f64,
    grid: &GridSpec,
    mut on_substep: impl FnMut(usize, usize, f64, f64),
) {
    let q = controls.production.row(n);
    let a = controls.exploration.row(n);
    let h = grid.dt / rates.len() as f64;
    let last = grid.space_intervals;
    for (k, &rate) in rates.iter().enumerate() {
        for (i, (x, clock)) in positions.iter_mut().zip(clocks.iter_mut()).enumerate() {
            let m = bin_of(*x, grid);
            let effort = a[(m + 1).min(last)];
            let drained = (*x - q[m] * h).max(0.0);
            on_substep(i, k, (*x - drained) / h, effort);
            *x = drained;
            if effort > 0.0 && clock.fires(rate * effort * h) {
                *x += jump;
            }
        }
    }
}

/// Discovery rates at the sub-step starts of grid step `n`.
fn substep_rates(
    schedule: &LambdaSchedule,
    grid: &GridSpec,
    n: usize,
    substeps: usize,
) -> Vec<f64> {
    let h = grid.dt / substeps as f64;
    (0..substeps)
        .map(|k| schedule.rate_at(grid.t(n) + k as f64 * h))
        .collect()
}

pub fn simulate_ensemble(
    controls: &ControlField,
    schedule: &LambdaSchedule,
    initial: &InitialDistribution,
    sim: &SimConfig,
    params: &ModelParams,
    grid: &GridSpec,
) -> Result<EmpiricalDistribution> {
    sim.validate()?;
    initial.validate()?;
    schedule.validate()?;
    check_controls(controls, grid)?;
    let nx = grid.nx();
    let nt = grid.nt();
    let rates: Vec<Vec<f64>> = (0..grid.time_steps)
        .map(|n| substep_rates(schedule, grid, n, sim.substeps))
        .collect();

    let chunks: Vec<(Vec<u32>, Vec<f64>)> = (0..sim.n_particles.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(sim.n_particles);
            let mut clocks = Vec::with_capacity(range.len());
            let mut positions = Vec::with_capacity(range.len());
            for i in range {
                let mut rng = stream(sim.seed, i);
                positions.push(initial.sample(1.0 - rng.gen::<f64>()));
                clocks.push(JumpClock::new(rng));
            }
            let mut counts = vec![0u32; nt * nx];
            let mut tally = |n: usize, positions: &[f64]| {
                for &x in positions {
                    counts[n * nx + bin_of(x, grid)] += 1;
                }
            };
            tally(0, &positions);
            for n in 0..grid.time_steps {
                advance(
                    &mut positions,
                    &mut clocks,
                    n,
                    controls,
                    &rates[n],
                    params.discovery_size,
                    grid,
                    |_, _, _, _| {},
                );
                tally(n + 1, &positions);
            }
            (counts, positions)
        })
        .collect();

    let mut counts = vec![0u64; nt * nx];
    let mut positions = Vec::with_capacity(sim.n_particles);
    for (chunk_counts, chunk_positions) in chunks {
        for (total, c) in counts.iter_mut().zip(chunk_counts) {
            *total += c as u64;
        }
        positions.extend(chunk_positions);
    }

    let mut eta = Surface::on_grid(grid);
    let total = sim.n_particles as f64;
    for n in 0..nt {
        let row = eta.row_mut(n);
        let mut above = 0u64;
        for m in (0..nx).rev() {
            above += counts[n * nx + m];
            row[m] = above as f64 / total;
        }
    }
    Ok(EmpiricalDistribution {
        eta,
        terminal: ParticleEnsemble {
            positions,
            seed: sim.seed,
            n_particles: sim.n_particles,
        },
    })
}

/// Sample mean and standard error of the discounted payoff
/// `∫ [p q − C_q(q) − C_a(a)] e^{-rs} ds` over `n_paths` paths from `x0` at `t = 0`.
#[allow(clippy::too_many_arguments)]
pub fn policy_value_estimate(
    x0: f64,
    controls: &ControlField,
    price: &PricePath,
    params: &ModelParams,
    schedule: &LambdaSchedule,
    sim: &SimConfig,
    grid: &GridSpec,
) -> Result<(f64, f64)> {
    sim.validate()?;
    schedule.validate()?;
    check_controls(controls, grid)?;
    if !(x0 >= 0.0) {
        return Err(Error::invalid("x0", "must be >= 0"));
    }
    if price.len() != grid.nt() {
        return Err(Error::LengthMismatch {
            expected: grid.nt(),
            found: price.len(),
        });
    }
    let r = params.discount_rate;
    let h = grid.dt / sim.substeps as f64;
    // ∫_s^{s+h} e^{-rτ} dτ = e^{-rs} (1 − e^{-rh}) / r
    let unit_weight = (1.0 - (-r * h).exp()) / r;
    let p = price.values();

    let chunks: Vec<Vec<f64>> = (0..sim.n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(sim.n_paths);
            let len = range.len();
            let mut clocks: Vec<JumpClock> =
                range.map(|i| JumpClock::new(stream(sim.seed, i))).collect();
            let mut positions = vec![x0; len];
            let mut payoff = vec![0.0; len];
            for n in 0..grid.time_steps {
                let rates = substep_rates(schedule, grid, n, sim.substeps);
                let price_n = p[n];
                advance(
                    &mut positions,
                    &mut clocks,
                    n,
                    controls,
                    &rates,
                    params.discovery_size,
                    grid,
                    |i, k, q, a| {
                        let s = grid.t(n) + k as f64 * h;
                        let flow = price_n * q
                            - params.production_cost.eval(q)
                            - params.exploration_cost.eval(a);
                        payoff[i] += flow * (-r * s).exp() * unit_weight;
                    },
                );
            }
            payoff
        })
        .collect();

    let payoffs: Vec<f64> = chunks.into_iter().flatten().collect();
    let n = payoffs.len() as f64;
    let mean = payoffs.iter().sum::<f64>() / n;
    let var = if payoffs.len() > 1 {
        payoffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

/// `sup_{n,m} |a − b|` between two upper CDFs on the same mesh.
pub fn sup_distance(a: &Surface, b: &Surface) -> f64 {
    a.sup_distance(b)
}
