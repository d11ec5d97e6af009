use std::path::Path;
use std::time::Instant;

use exploration_mfg::export::{
    write_aggregates, write_density, write_epsilon_sweep, write_lambda_sweep, write_residuals,
    write_series, write_stationary_profile, write_surface,
};
use exploration_mfg::hjb::saturation_level;
use exploration_mfg::mc_oracle::RNG_ALGORITHM;
use exploration_mfg::stationary::solve_stationary_full;
use exploration_mfg::transport::initial_slice;
use exploration_mfg::{
    aggregate_quantities, conservation_residual, epsilon_sweep, fluid_stationary_closed_form,
    lambda_sweep, picard_solve, policy_value_estimate, simulate_ensemble, solve_fluid, solve_hjb,
    solve_transport, EquilibriumSolution, FluidConfig, GridSpec, HjbSolution, IterationResidual,
    PricePath, ReservesDistribution, StationarySolution,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::Command;

/// Written last as `manifest.json`; its `config` key reproduces the run.
#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    version: &'static str,
    config: RunConfig,
    grid: GridSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    rng: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    residuals: Vec<IterationResidual>,
    summary: Value,
    timings: Value,
    artifacts: Vec<String>,
}

struct Run {
    config: RunConfig,
    grid: GridSpec,
    artifacts: Vec<String>,
    stages: serde_json::Map<String, Value>,
    clock: Instant,
}

impl Run {
    fn path(&mut self, name: &str) -> std::path::PathBuf {
        self.artifacts.push(name.to_string());
        self.config.output.dir.join(name)
    }

    fn lap(&mut self, stage: &str) {
        let secs = self.clock.elapsed().as_secs_f64();
        self.stages.insert(stage.to_string(), json!(secs));
        self.clock = Instant::now();
    }
}

pub fn execute(command: Command, config: RunConfig) -> Result<(), Failure> {
    let grid = config.validate()?;
    // the particle simulation runs on the global pool; sweeps size their own
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build_global()
    {
        log::debug!("global pool already initialised: {e}");
    }
    std::fs::create_dir_all(&config.output.dir)?;
    let started = Instant::now();
    let mut run = Run {
        config,
        grid,
        artifacts: Vec::new(),
        stages: serde_json::Map::new(),
        clock: Instant::now(),
    };
    let report = match command {
        Command::Hjb => hjb(&mut run),
        Command::Transport => transport(&mut run),
        Command::Solve => solve(&mut run),
        Command::Stationary => stationary(&mut run),
        Command::SweepLambda => sweep_lambda(&mut run),
        Command::Fluid { .. } => fluid(&mut run),
        Command::SweepEpsilon => sweep_epsilon(&mut run),
        Command::Validate => validate(&mut run),
    }?;
    run.stages
        .insert("total".into(), json!(started.elapsed().as_secs_f64()));
    let manifest_path = run.config.output.dir.join("manifest.json");
    let manifest = Manifest {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config: run.config,
        grid: run.grid,
        rng: report.rng,
        iterations: report.iterations,
        residuals: report.residuals,
        summary: report.summary,
        timings: Value::Object(run.stages),
        artifacts: run.artifacts,
    };
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    log::info!("wrote {}", manifest_path.display());
    Ok(())
}

#[derive(Default)]
struct Report {
    rng: Option<Value>,
    iterations: Option<usize>,
    residuals: Vec<IterationResidual>,
    summary: Value,
}

fn exogenous_hjb(run: &mut Run) -> Result<HjbSolution, Failure> {
    let c = &run.config;
    let price = PricePath::constant(c.solver.initial_price, &run.grid, &c.model)?;
    let sol = solve_hjb(&price, &c.schedule, &c.model, &run.grid)?;
    run.lap("hjb");
    Ok(sol)
}

fn equilibrium(run: &mut Run) -> Result<EquilibriumSolution, Failure> {
    let c = &run.config;
    let eta0 = initial_slice(&c.initial, &run.grid)?;
    let p0 = PricePath::constant(c.solver.initial_price, &run.grid, &c.model)?;
    let sol = picard_solve(&c.model, &c.schedule, &eta0, &run.grid, &p0, &c.solver)?;
    run.lap("fixed_point");
    Ok(sol)
}

/// Time nodes at 0, T/4, T/2, 3T/4, T.
fn snapshot_times(grid: &GridSpec) -> Vec<usize> {
    let mut times: Vec<usize> = (0..=4)
        .map(|k| grid.nearest_time_index(0.25 * k as f64 * grid.horizon()))
        .collect();
    times.dedup();
    times
}

fn exhaustion_time(exhausted: &[f64], grid: &GridSpec) -> Option<f64> {
    exhausted
        .iter()
        .position(|&p| p >= 1.0 - 1e-4)
        .map(|n| grid.t(n))
}

fn write_controls(run: &mut Run, sol: &HjbSolution) -> Result<(), Failure> {
    let (grid, stride) = (run.grid, run.config.output.surface_stride);
    let path = run.path("value.csv");
    write_surface(&path, &sol.value.values, &grid, stride)?;
    let path = run.path("production.csv");
    write_surface(&path, &sol.controls.production, &grid, stride)?;
    let path = run.path("exploration.csv");
    write_surface(&path, &sol.controls.exploration, &grid, stride)?;
    let saturation: Vec<f64> = (0..grid.nt())
        .map(|n| saturation_level(&sol.controls, &grid, grid.t(n)))
        .collect();
    let path = run.path("saturation.csv");
    write_series(&path, "x_sat", &saturation, &grid)?;
    Ok(())
}

fn write_distribution(run: &mut Run, dist: &ReservesDistribution) -> Result<(), Failure> {
    let grid = run.grid;
    let path = run.path("eta.csv");
    write_surface(&path, &dist.eta, &grid, run.config.output.surface_stride)?;
    let path = run.path("density.csv");
    write_density(&path, dist, &grid, &snapshot_times(&grid))?;
    Ok(())
}

fn hjb(run: &mut Run) -> Result<Report, Failure> {
    let sol = exogenous_hjb(run)?;
    write_controls(run, &sol)?;
    run.lap("write");
    Ok(Report {
        summary: json!({
            "price": run.config.solver.initial_price,
            "value_at_origin": sol.value.values.get(0, 0),
            "saturation_at_start": saturation_level(&sol.controls, &run.grid, 0.0),
        }),
        ..Default::default()
    })
}

fn transport(run: &mut Run) -> Result<Report, Failure> {
    let sol = exogenous_hjb(run)?;
    let c = &run.config;
    let eta0 = initial_slice(&c.initial, &run.grid)?;
    let dist = solve_transport(&sol.controls, &c.schedule, &eta0, &run.grid)?;
    let agg = aggregate_quantities(&sol.controls, &dist, &c.schedule, &c.model, &run.grid);
    run.lap("transport");
    write_distribution(run, &dist)?;
    let grid = run.grid;
    let path = run.path("aggregates.csv");
    write_aggregates(&path, &agg, &grid)?;
    run.lap("write");
    Ok(Report {
        summary: json!({
            "price": run.config.solver.initial_price,
            "exhaustion_time": exhaustion_time(&dist.pi, &grid),
            "terminal_exhausted": dist.pi.last(),
        }),
        ..Default::default()
    })
}

fn equilibrium_artifacts(run: &mut Run, sol: &EquilibriumSolution) -> Result<(), Failure> {
    let grid = run.grid;
    let stride = run.config.output.surface_stride;
    let path = run.path("value.csv");
    write_surface(&path, &sol.value.values, &grid, stride)?;
    let path = run.path("production.csv");
    write_surface(&path, &sol.controls.production, &grid, stride)?;
    let path = run.path("exploration.csv");
    write_surface(&path, &sol.controls.exploration, &grid, stride)?;
    write_distribution(run, &sol.distribution)?;
    let path = run.path("aggregates.csv");
    write_aggregates(&path, &sol.aggregates, &grid)?;
    let path = run.path("residuals.csv");
    write_residuals(&path, &sol.residual_history)?;
    Ok(())
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn solve(run: &mut Run) -> Result<Report, Failure> {
    let sol = equilibrium(run)?;
    equilibrium_artifacts(run, &sol)?;
    run.lap("write");
    let agg = &sol.aggregates;
    Ok(Report {
        iterations: Some(sol.iterations),
        residuals: sol.residual_history.clone(),
        summary: json!({
            "exhaustion_time": exhaustion_time(&agg.exhausted, &run.grid),
            "initial_price": agg.price[0],
            "max_conservation_residual": max_abs(&conservation_residual(agg, &run.grid)),
        }),
        ..Default::default()
    })
}

fn stationary_summary(s: &StationarySolution) -> Value {
    json!({
        "lambda": s.lambda,
        "time": s.time,
        "Q_tilde": s.production,
        "A_tilde": s.discovery,
        "R_tilde": s.reserves,
        "pi_tilde": s.exhausted,
        "p_tilde": s.price,
        "x_sat": s.saturation,
        "plateau_variation": s.plateau_variation,
        "plateau_ok": s.plateau_ok,
        "hjb_residual": s.hjb_residual,
    })
}

fn stationary(run: &mut Run) -> Result<Report, Failure> {
    let c = &run.config;
    let (s, eq) = solve_stationary_full(
        c.stationary.lambda,
        &c.model,
        &c.initial,
        &run.grid,
        &c.solver,
    )?;
    run.lap("fixed_point");
    let grid = run.grid;
    let path = run.path("stationary_profile.csv");
    write_stationary_profile(&path, &s, &grid)?;
    let path = run.path("aggregates.csv");
    write_aggregates(&path, &eq.aggregates, &grid)?;
    let path = run.path("residuals.csv");
    write_residuals(&path, &eq.residual_history)?;
    run.lap("write");
    if !s.plateau_ok {
        log::warn!(
            "aggregates vary by {:.3} over the middle of the horizon; not a plateau",
            s.plateau_variation
        );
    }
    Ok(Report {
        iterations: Some(eq.iterations),
        residuals: eq.residual_history,
        summary: stationary_summary(&s),
        ..Default::default()
    })
}

fn sweep_lambda(run: &mut Run) -> Result<Report, Failure> {
    let jobs = run.config.jobs;
    let c = &run.config;
    let rows = lambda_sweep(
        &c.sweep.lambdas,
        &c.model,
        &c.initial,
        &run.grid,
        &c.solver,
        jobs,
    )?;
    run.lap("sweep");
    let path = run.path("lambda_sweep.csv");
    write_lambda_sweep(&path, &rows)?;
    let failed: Vec<Value> = rows
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|e| json!({"lambda": r.lambda, "error": e.to_string()}))
        })
        .collect();
    for row in &rows {
        if let Err(e) = &row.outcome {
            log::warn!("lambda = {}: {e}", row.lambda);
        }
    }
    Ok(Report {
        summary: json!({ "rows": rows.len(), "failed": failed }),
        ..Default::default()
    })
}

fn fluid(run: &mut Run) -> Result<Report, Failure> {
    let c = run.config.clone();
    let fc = FluidConfig {
        params: c.model,
        lambda: c.fluid.lambda,
        epsilon: c.fluid.epsilon,
    };
    section_fluid(fc.validate(&run.grid))?;
    let grid = run.grid;
    if fc.epsilon == 0.0 {
        let closed = fluid_stationary_closed_form(&c.model, fc.lambda)?;
        println!("Q_tilde_0 = {}", rounded(closed.production));
        println!("p_tilde_0 = {}", rounded(closed.price));
        let eta0 = initial_slice(&c.initial, &grid)?;
        let p0 = PricePath::constant(c.solver.initial_price, &grid, &c.model)?;
        let sol = solve_fluid(&p0, &c.model, fc.lambda, &eta0, &grid, &c.solver)?;
        run.lap("fixed_point");
        equilibrium_artifacts(run, &sol)?;
        run.lap("write");
        let n = grid.nearest_time_index(0.5 * grid.horizon());
        return Ok(Report {
            iterations: Some(sol.iterations),
            residuals: sol.residual_history.clone(),
            summary: json!({
                "epsilon": 0.0,
                "closed_form": closed,
                "numerical": {
                    "Q_tilde": sol.aggregates.production[n],
                    "R_tilde": sol.aggregates.reserves[n],
                    "pi_tilde": sol.aggregates.exhausted[n],
                    "p_tilde": sol.aggregates.price[n],
                },
            }),
            ..Default::default()
        });
    }
    let scaled = fc.scaled_params();
    let rate = fc
        .scaled_schedule()
        .as_constant()
        .ok_or_else(|| Failure::Solver("scaled schedule is not constant".into()))?;
    let scaled_grid = grid.rebuild_for(&scaled)?;
    let (s, eq) = solve_stationary_full(rate, &scaled, &c.initial, &scaled_grid, &c.solver)?;
    run.lap("fixed_point");
    println!("Q_tilde = {}", rounded(s.production));
    println!("R_tilde = {}", rounded(s.reserves));
    let path = run.path("stationary_profile.csv");
    write_stationary_profile(&path, &s, &scaled_grid)?;
    let path = run.path("aggregates.csv");
    write_aggregates(&path, &eq.aggregates, &scaled_grid)?;
    let path = run.path("residuals.csv");
    write_residuals(&path, &eq.residual_history)?;
    run.lap("write");
    Ok(Report {
        iterations: Some(eq.iterations),
        residuals: eq.residual_history,
        summary: json!({ "epsilon": fc.epsilon, "stationary": stationary_summary(&s) }),
        ..Default::default()
    })
}

fn section_fluid<T>(result: exploration_mfg::Result<T>) -> Result<T, Failure> {
    result.map_err(|e| match Failure::from(e) {
        Failure::Validation { field, reason } if !field.contains('.') => {
            Failure::validation(format!("fluid.{field}"), reason)
        }
        other => other,
    })
}

fn sweep_epsilon(run: &mut Run) -> Result<Report, Failure> {
    let jobs = run.config.jobs;
    let c = &run.config;
    let rows = epsilon_sweep(
        &c.sweep.epsilons,
        &c.model,
        c.fluid.lambda,
        &c.initial,
        &run.grid,
        &c.solver,
        jobs,
    )?;
    run.lap("sweep");
    let path = run.path("epsilon_sweep.csv");
    write_epsilon_sweep(&path, &rows)?;
    let failed: Vec<Value> = rows
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|e| json!({"epsilon": r.epsilon, "error": e.to_string()}))
        })
        .collect();
    Ok(Report {
        summary: json!({ "rows": rows.len(), "failed": failed }),
        ..Default::default()
    })
}

fn validate(run: &mut Run) -> Result<Report, Failure> {
    let sol = equilibrium(run)?;
    let c = run.config.clone();
    let grid = run.grid;
    let emp = simulate_ensemble(
        &sol.controls,
        &c.schedule,
        &c.initial,
        &c.sim,
        &c.model,
        &grid,
    )?;
    run.lap("simulation");
    let distance = emp.eta.sup_distance(&sol.distribution.eta);
    let path = run.path("mc_eta.csv");
    write_surface(&path, &emp.eta, &grid, c.output.surface_stride)?;
    let mut points = Vec::new();
    for &x0 in &c.validate.x0 {
        let (estimate, se) = policy_value_estimate(
            x0,
            &sol.controls,
            &sol.price,
            &c.model,
            &c.schedule,
            &c.sim,
            &grid,
        )?;
        let v = sol.value.values.get(0, (x0 / grid.dx).round() as usize);
        points.push(json!({
            "x0": x0,
            "simulated": estimate,
            "standard_error": se,
            "value_function": v,
            "within_tolerance": (estimate - v).abs() <= 3.0 * se + 0.02 * v.abs(),
        }));
    }
    run.lap("policy_values");
    let path = run.path("validation.json");
    write_json(
        &path,
        &json!({ "sup_distance": distance, "policy_values": points }),
    )?;
    println!("sup |MC - transport| = {}", rounded(distance));
    Ok(Report {
        rng: Some(json!({ "algorithm": RNG_ALGORITHM, "seed": c.sim.seed })),
        iterations: Some(sol.iterations),
        residuals: sol.residual_history.clone(),
        summary: json!({
            "sup_distance": distance,
            "within_tolerance": distance <= 0.02,
            "policy_values": points,
        }),
    })
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Twelve significant digits, so closed-form values print without round-off noise.
fn rounded(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}
