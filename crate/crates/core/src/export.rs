//! Plot-ready CSV writers. Every file has a header row and a fixed column order.

use std::io::Write;
use std::path::Path;

use crate::coupling::Aggregates;
use crate::error::{IterationResidual, Result};
use crate::fluid::EpsilonRow;
use crate::grid::{GridSpec, Surface};
use crate::stationary::{StationarySolution, SweepRow};
use crate::transport::{differenced_density, ReservesDistribution};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Surface on `(t_n, x_m)`: header `t, x_0, x_1, ...`, one row per `stride`-th time node
/// (the last node is always written).
pub fn write_surface(path: &Path, surface: &Surface, grid: &GridSpec, stride: usize) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(grid.x_nodes().into_iter().map(num));
    w.write_record(&header)?;
    for n in selected_rows(surface.rows(), stride) {
        let mut record = vec![num(grid.t(n))];
        record.extend(surface.row(n).iter().copied().map(num));
        w.write_record(&record)?;
    }
    finish(w)
}

fn selected_rows(rows: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..rows).step_by(stride.max(1)).collect();
    if rows > 0 && out.last() != Some(&(rows - 1)) {
        out.push(rows - 1);
    }
    out
}

/// Columns `t, Q, A, R, pi, p`.
pub fn write_aggregates(path: &Path, aggregates: &Aggregates, grid: &GridSpec) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "Q", "A", "R", "pi", "p"])?;
    for n in 0..aggregates.production.len() {
        w.write_record([
            num(grid.t(n)),
            num(aggregates.production[n]),
            num(aggregates.discovery[n]),
            num(aggregates.reserves[n]),
            num(aggregates.exhausted[n]),
            num(aggregates.price[n]),
        ])?;
    }
    finish(w)
}

/// Columns `iteration, value_delta, distribution_delta, price_delta`.
pub fn write_residuals(path: &Path, history: &[IterationResidual]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "iteration",
        "value_delta",
        "distribution_delta",
        "price_delta",
    ])?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            num(r.value_delta),
            num(r.distribution_delta),
            num(r.price_delta),
        ])?;
    }
    finish(w)
}

/// Columns `t, <name>`.
pub fn write_series(path: &Path, name: &str, values: &[f64], grid: &GridSpec) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", name])?;
    for (n, v) in values.iter().enumerate() {
        w.write_record([num(grid.t(n)), num(*v)])?;
    }
    finish(w)
}

/// Long format `t, x, density` for the differenced density at the given time nodes.
pub fn write_density(
    path: &Path,
    distribution: &ReservesDistribution,
    grid: &GridSpec,
    times: &[usize],
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "x", "density"])?;
    for &n in times {
        for (m, d) in distribution.density(n, grid.dx).into_iter().enumerate() {
            w.write_record([num(grid.t(n)), num(grid.x(m)), num(d)])?;
        }
    }
    finish(w)
}

/// Stationary slice: columns `x, v, eta, density`.
pub fn write_stationary_profile(
    path: &Path,
    solution: &StationarySolution,
    grid: &GridSpec,
) -> Result<()> {
    let density = differenced_density(&solution.eta, grid.dx);
    let mut w = writer(path)?;
    w.write_record(["x", "v", "eta", "density"])?;
    for m in 0..solution.value.len() {
        w.write_record([
            num(grid.x(m)),
            num(solution.value[m]),
            num(solution.eta[m]),
            num(density[m]),
        ])?;
    }
    finish(w)
}

/// Columns `lambda, Q_tilde, A_tilde, R_tilde, pi_tilde, p_tilde, x_sat, plateau_ok, status`;
/// failed rows carry `NaN` values and the error message as status.
pub fn write_lambda_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "lambda",
        "Q_tilde",
        "A_tilde",
        "R_tilde",
        "pi_tilde",
        "p_tilde",
        "x_sat",
        "plateau_ok",
        "status",
    ])?;
    for row in rows {
        let record = match &row.outcome {
            Ok(s) => [
                num(row.lambda),
                num(s.production),
                num(s.discovery),
                num(s.reserves),
                num(s.exhausted),
                num(s.price),
                num(s.saturation),
                s.plateau_ok.to_string(),
                "ok".to_string(),
            ],
            Err(e) => {
                let nan = num(f64::NAN);
                [
                    num(row.lambda),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan,
                    "false".to_string(),
                    e.to_string(),
                ]
            }
        };
        w.write_record(&record)?;
    }
    finish(w)
}

/// Columns `epsilon, Q_tilde, R_tilde, pi_tilde, p_tilde, source, status`.
pub fn write_epsilon_sweep(path: &Path, rows: &[EpsilonRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "epsilon", "Q_tilde", "R_tilde", "pi_tilde", "p_tilde", "source", "status",
    ])?;
    for row in rows {
        let (values, status) = match &row.outcome {
            Ok(s) => (
                [s.production, s.reserves, s.exhausted, s.price],
                "ok".to_string(),
            ),
            Err(e) => ([f64::NAN; 4], e.to_string()),
        };
        let mut record = vec![num(row.epsilon)];
        record.extend(values.into_iter().map(num));
        record.push(row.source.as_str().to_string());
        record.push(status);
        w.write_record(&record)?;
    }
    finish(w)
}
