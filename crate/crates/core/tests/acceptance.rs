//! Landmark checks at desk scale (dx = 0.1, x_max = 120, T = 50), one line per
//! criterion. Criteria listed in `KNOWN_DEVIATIONS` are evaluated at full
//! tolerance and reported as they come out, but a failure there does not fail
//! the run; every other failure does.

use std::time::Instant;

use exploration_mfg::transport::initial_slice;
use exploration_mfg::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const DX: f64 = 0.1;
const TOL: f64 = 1e-6;
const KNOWN_DEVIATIONS: [u32; 4] = [2, 4, 5, 7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference() -> ModelParams {
    ModelParams::reference()
}

fn desk_grid(params: &ModelParams, dx: f64) -> GridSpec {
    GridSpec::build(params, 120.0, dx, None).unwrap()
}

fn solve(
    params: &ModelParams,
    schedule: &LambdaSchedule,
    grid: &GridSpec,
) -> Result<EquilibriumSolution> {
    let eta0 = initial_slice(&InitialDistribution::default(), grid)?;
    let p0 = PricePath::constant(3.0, grid, params)?;
    let settings = SolverSettings {
        tol: TOL,
        ..Default::default()
    };
    picard_solve(params, schedule, &eta0, grid, &p0, &settings)
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn window(grid: &GridSpec, from: f64, to: f64) -> Vec<usize> {
    (0..grid.nt())
        .filter(|&n| grid.t(n) >= from - 1e-9 && grid.t(n) <= to + 1e-9)
        .collect()
}

fn fluid_closed_form() -> Outcome {
    let s = fluid_stationary_closed_form(&reference(), 1.0).unwrap();
    let pass = (s.production - 1.6).abs() <= 1e-12 && (s.price - 3.4).abs() <= 1e-12;
    outcome(
        pass,
        format!("Q0 = {:.15}, p0 = {:.15}", s.production, s.price),
    )
}

fn picard_iterations(sol: &Result<EquilibriumSolution>) -> Outcome {
    match sol {
        Ok(sol) => {
            let trail: Vec<String> = sol
                .residual_history
                .iter()
                .rev()
                .take(3)
                .map(|r| format!("{:.1e}", r.value_delta))
                .collect();
            outcome(
                sol.iterations <= 8,
                format!(
                    "{} iterations to tol {TOL:.0e} (limit 8); last value deltas {}",
                    sol.iterations,
                    trail.join(", ")
                ),
            )
        }
        Err(e) => outcome(false, format!("solve failed: {e}")),
    }
}

fn exhaustion_times(decay: &Result<EquilibriumSolution>, grid: &GridSpec) -> Outcome {
    let params = reference();
    let first = decay.as_ref().ok().and_then(|sol| {
        sol.aggregates
            .exhausted
            .iter()
            .position(|&p| p >= 1.0 - 1e-4)
            .map(|n| grid.t(n))
    });
    let none = solve(&params, &LambdaSchedule::constant(0.0), grid);
    let late_reserves = none.as_ref().ok().map(|sol| {
        window(grid, 12.0 + grid.dt, grid.horizon())
            .into_iter()
            .map(|n| sol.aggregates.reserves[n])
            .fold(0.0, f64::max)
    });
    let pass = matches!(first, Some(t) if (39.0..=43.0).contains(&t))
        && matches!(late_reserves, Some(r) if r < 1e-3);
    outcome(
        pass,
        format!(
            "exhaustion at t = {} (band [39, 43]); without exploration max R(t > 12) = {}",
            first.map_or("never".into(), |t| format!("{t:.2}")),
            late_reserves.map_or("n/a".into(), |r| format!("{r:.2e}"))
        ),
    )
}

fn stationary_plateau(sol: &Result<EquilibriumSolution>, grid: &GridSpec) -> Outcome {
    let Ok(sol) = sol else {
        return outcome(false, "lambda = 1 solve failed".into());
    };
    let agg = &sol.aggregates;
    let idx = window(grid, 15.0, 45.0);
    let mean_r = idx.iter().map(|&n| agg.reserves[n]).sum::<f64>() / idx.len() as f64;
    let gap = idx
        .iter()
        .map(|&n| (agg.production[n] - agg.discovery[n]).abs() / agg.production[n])
        .fold(0.0, f64::max);
    outcome(
        (1.7..=2.1).contains(&mean_r) && gap < 0.05,
        format!(
            "mean R on [15, 45] = {mean_r:.4} (band [1.7, 2.1]); max |Q - A|/Q = {gap:.4} (< 0.05)"
        ),
    )
}

fn comparative_statics(unit: &Result<EquilibriumSolution>, grid: &GridSpec) -> Outcome {
    let params = reference();
    let lambdas = [0.02, 0.1, 0.2, 0.5, 2.0, 5.0, 10.0];
    let rows = lambda_sweep(
        &lambdas,
        &params,
        &InitialDistribution::default(),
        grid,
        &SolverSettings::default(),
        1,
    )
    .unwrap();
    let mut solved: Vec<(f64, StationarySolution)> = Vec::new();
    for row in rows {
        match row.outcome {
            Ok(s) => solved.push((row.lambda, s)),
            Err(e) => return outcome(false, format!("lambda = {} failed: {e}", row.lambda)),
        }
    }
    match unit {
        Ok(eq) => solved.push((1.0, stationary::extract_stationary(eq, 1.0, &params, grid))),
        Err(e) => return outcome(false, format!("lambda = 1 failed: {e}")),
    }
    let at = |l: f64| &solved.iter().find(|(x, _)| *x == l).unwrap().1;

    let mut notes = Vec::new();
    let mut pass = true;
    for (l, target) in [(0.2, 60.7), (1.0, 64.8), (10.0, 23.9)] {
        let x = at(l).saturation;
        let ok = (x - target).abs() <= params.discovery_size;
        pass &= ok;
        notes.push(format!(
            "x_sat({l}) = {x:.1} vs {target}{}",
            if ok { "" } else { " (off)" }
        ));
    }
    let path: Vec<&StationarySolution> = [0.1, 0.5, 1.0, 2.0, 5.0].iter().map(|&l| at(l)).collect();
    let monotone = path.windows(2).all(|w| {
        w[1].production >= w[0].production
            && w[1].reserves >= w[0].reserves
            && w[1].exhausted <= w[0].exhausted
    });
    pass &= monotone;
    notes.push(format!("monotone over {{0.1, 0.5, 1, 2, 5}}: {monotone}"));
    let low = at(0.02);
    let shut = low.discovery < 1e-9 && low.reserves < 1e-9;
    pass &= shut;
    notes.push(format!(
        "lambda = 0.02: A = {:.1e}, R = {:.1e}",
        low.discovery, low.reserves
    ));
    outcome(pass, notes.join("; "))
}

fn conservation_order(mid: &Result<EquilibriumSolution>, grid: &GridSpec) -> Outcome {
    let params = reference();
    let residual = |sol: &EquilibriumSolution, g: &GridSpec| {
        max_abs(&conservation_residual(&sol.aggregates, g))
    };
    let Ok(mid) = mid else {
        return outcome(false, "dx = 0.1 solve failed".into());
    };
    let mut levels = Vec::new();
    for dx in [0.2, 0.05] {
        let g = desk_grid(&params, dx);
        match solve(&params, &LambdaSchedule::default(), &g) {
            Ok(sol) => levels.push(residual(&sol, &g)),
            Err(e) => return outcome(false, format!("dx = {dx} solve failed: {e}")),
        }
    }
    let (coarse, fine) = (levels[0], levels[1]);
    let middle = residual(mid, grid);
    let (r1, r2) = (coarse / middle, middle / fine);
    outcome(
        r1 >= 1.7 && r2 >= 1.7,
        format!("max residual {coarse:.4e} / {middle:.4e} / {fine:.4e}; ratios {r1:.2}, {r2:.2} (>= 1.7)"),
    )
}

fn poisson_tail(mean: f64, k: usize) -> f64 {
    let mut pmf = (-mean).exp();
    let mut below = 0.0;
    for j in 0..k {
        below += pmf;
        pmf *= mean / (j + 1) as f64;
    }
    1.0 - below
}

fn oracle_equivalence(sol: &Result<EquilibriumSolution>, grid: &GridSpec) -> Outcome {
    let params = reference();
    let Ok(sol) = sol else {
        return outcome(false, "reference solve failed".into());
    };
    let schedule = LambdaSchedule::default();
    let sim = SimConfig::default();
    let emp = simulate_ensemble(
        &sol.controls,
        &schedule,
        &InitialDistribution::default(),
        &sim,
        &params,
        grid,
    )
    .unwrap();
    let distance = emp.eta.sup_distance(&sol.distribution.eta);
    let mut pass = distance <= 0.02;
    let mut notes = vec![format!(
        "sup |MC - transport| = {distance:.4} at {} particles (<= 0.02)",
        sim.n_particles
    )];

    // pure discovery from zero reserves against the Poisson tail
    let mut short = reference();
    short.horizon = 3.0;
    let g = GridSpec::build(&short, 15.0, 0.5, Some(0.002)).unwrap();
    let mut controls = ControlField::zeros(&g);
    for n in 0..g.nt() {
        controls.exploration.row_mut(n).fill(1.0);
    }
    let n_particles = 100_000;
    let tail = simulate_ensemble(
        &controls,
        &LambdaSchedule::constant(1.0),
        &InitialDistribution::PointMass { at: 0.0 },
        &SimConfig { n_particles, ..sim },
        &short,
        &g,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for n in [
        g.nearest_time_index(1.0),
        g.nearest_time_index(2.0),
        g.time_steps,
    ] {
        for k in 1..=6 {
            let exact = poisson_tail(g.t(n), k);
            let clt = (exact * (1.0 - exact) / n_particles as f64).sqrt();
            let m = (k as f64 / g.dx).round() as usize;
            worst = worst.max((tail.eta.get(n, m) - exact).abs() / clt);
        }
    }
    pass &= worst <= 3.0;
    notes.push(format!("Poisson tail within {worst:.2} CLT errors (<= 3)"));

    for x in [0.0, 5.0, 10.0] {
        let (estimate, se) =
            policy_value_estimate(x, &sol.controls, &sol.price, &params, &schedule, &sim, grid)
                .unwrap();
        let v = sol.value.values.get(0, (x / grid.dx).round() as usize);
        let ok = (estimate - v).abs() <= 3.0 * se + 0.02 * v;
        pass &= ok;
        notes.push(format!("J(0,{x}) = {estimate:.3} +- {se:.3} vs v = {v:.3}"));
    }
    outcome(pass, notes.join("; "))
}

fn epsilon_shape() -> Outcome {
    let params = reference();
    // δε must be a whole number of cells for ε = 0.25, 0.5, 1
    let grid = GridSpec::build(&params, 120.0, 0.125, None).unwrap();
    let rows = epsilon_sweep(
        &[0.0, 0.25, 0.5, 1.0],
        &params,
        1.0,
        &InitialDistribution::default(),
        &grid,
        &SolverSettings::default(),
        1,
    )
    .unwrap();
    let mut summaries = Vec::new();
    for row in &rows {
        match &row.outcome {
            Ok(s) => summaries.push((row.epsilon, row.source, *s)),
            Err(e) => return outcome(false, format!("epsilon = {} failed: {e}", row.epsilon)),
        }
    }
    let closed = summaries[0].2;
    let numerical_zero = summaries[1].2;
    let monotone = |first: &fluid::EpsilonSummary| {
        let mut path = vec![*first];
        path.extend(summaries[2..].iter().map(|s| s.2));
        path.windows(2)
            .all(|w| w[1].production <= w[0].production && w[1].reserves >= w[0].reserves)
    };
    let pass = summaries[0].1 == RowSource::ClosedForm
        && closed.reserves == 0.0
        && monotone(&closed)
        && monotone(&numerical_zero);
    let table: Vec<String> = summaries
        .iter()
        .map(|(e, src, s)| {
            format!(
                "{e}/{}: Q {:.4} R {:.4}",
                src.as_str(),
                s.production,
                s.reserves
            )
        })
        .collect();
    outcome(pass, table.join("; "))
}

fn property_suites() -> Outcome {
    let params = reference();
    let mut runner = TestRunner::new(Config {
        cases: 512,
        failure_persistence: None,
        ..Config::default()
    });
    let mut failures = Vec::new();

    let convex = runner.run(
        &(0.0f64..50.0, 1e-3f64..50.0, 0.01f64..0.99),
        |(q1, gap, theta)| {
            for c in [params.production_cost, params.exploration_cost] {
                let q2 = q1 + gap;
                let mid = c.cost(theta * q1 + (1.0 - theta) * q2).unwrap();
                let chord = theta * c.cost(q1).unwrap() + (1.0 - theta) * c.cost(q2).unwrap();
                prop_assert!(mid < chord);
            }
            Ok(())
        },
    );
    if convex.is_err() {
        failures.push("cost convexity");
    }

    let affine = runner.run(&(0u32..20_480, 0u32..20_480), |(i, j)| {
        let (q1, q2) = (i as f64 / 1024.0, j as f64 / 1024.0);
        prop_assert_eq!(
            params.inverse_demand(q1) + params.inverse_demand(q2),
            2.0 * params.inverse_demand(0.5 * (q1 + q2))
        );
        Ok(())
    });
    if affine.is_err() {
        failures.push("demand affinity");
    }

    let cdf = runner.run(&(0.5f64..50.0, 0.0f64..60.0, 0.0f64..10.0), |(u, x, dx)| {
        let d = InitialDistribution::Parabolic { support: u };
        prop_assert_eq!(d.upper_cdf(0.0), 1.0);
        prop_assert!((0.0..=1.0).contains(&d.upper_cdf(x)));
        prop_assert!(d.upper_cdf(x + dx) <= d.upper_cdf(x));
        prop_assert_eq!(d.upper_cdf(u + x), 0.0);
        Ok(())
    });
    if cdf.is_err() {
        failures.push("CDF invariants");
    }

    let cells = prop::collection::vec(0u32..=1024, 30);
    let telescoping = runner.run(&(cells, -64i32..64), |(mut raw, c)| {
        raw.sort_unstable_by(|a, b| b.cmp(a));
        let mut eta = vec![1.0];
        eta.extend(raw.into_iter().map(|k| k as f64 / 1024.0));
        eta.push(0.0);
        let c = c as f64 / 8.0;
        let f = vec![c; eta.len()];
        prop_assert_eq!(
            stieltjes_sum(&f, &eta).unwrap(),
            c * (eta[1] - eta[eta.len() - 1])
        );
        Ok(())
    });
    if telescoping.is_err() {
        failures.push("stieltjes telescoping");
    }

    let clamps = runner.run(
        &(0.2f64..10.0, 0.0f64..20.0, -5.0f64..20.0),
        |(p, slope, jump)| {
            let q = params.production_cost.best_response(p - slope);
            let a = params.exploration_cost.best_response(jump);
            prop_assert!(q >= 0.0 && a >= 0.0);
            prop_assert!(
                q <= (p - params.production_cost.linear).max(0.0)
                    / params.production_cost.quadratic
            );
            if slope >= p - params.production_cost.linear {
                prop_assert_eq!(q, 0.0);
            }
            if jump <= params.exploration_cost.linear {
                prop_assert_eq!(a, 0.0);
            }
            Ok(())
        },
    );
    if clamps.is_err() {
        failures.push("first-order clamps");
    }

    let examples = params.production_cost(2.0).unwrap() == 2.2
        && params.exploration_cost(1.0).unwrap() == 0.6
        && params.inverse_demand(2.0) == 3.0
        && InitialDistribution::Parabolic { support: 10.0 }.upper_cdf(5.0) == 0.5
        && LambdaSchedule::linear_decay(1.0, 40.0).rate_at(20.0) == 0.5;
    if !examples {
        failures.push("worked examples");
    }

    if failures.is_empty() {
        outcome(
            true,
            "convexity, affinity, CDF, telescoping, clamps, worked examples".into(),
        )
    } else {
        outcome(false, format!("failed: {}", failures.join(", ")))
    }
}

fn main() {
    let started = Instant::now();
    let params = reference();
    let grid = desk_grid(&params, DX);
    let mut report: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut record = |id: u32, name: &'static str, run: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let out = run();
        let secs = t0.elapsed().as_secs_f64();
        println!(
            "criterion {id} [{name}]: {} ({secs:.1}s) {}",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        report.push((id, name, out, secs));
    };

    record(1, "fluid closed form", &mut fluid_closed_form);
    record(9, "property suites", &mut property_suites);

    let decay = solve(&params, &LambdaSchedule::default(), &grid);
    record(2, "Picard convergence", &mut || picard_iterations(&decay));
    record(3, "exhaustion times", &mut || {
        exhaustion_times(&decay, &grid)
    });
    record(7, "oracle equivalence", &mut || {
        oracle_equivalence(&decay, &grid)
    });
    record(6, "conservation order", &mut || {
        conservation_order(&decay, &grid)
    });
    drop(decay);

    let unit = solve(&params, &LambdaSchedule::constant(1.0), &grid);
    record(4, "stationary plateau", &mut || {
        stationary_plateau(&unit, &grid)
    });
    record(5, "saturation comparative statics", &mut || {
        comparative_statics(&unit, &grid)
    });
    drop(unit);

    record(8, "epsilon sweep shape", &mut epsilon_shape);

    report.sort_by_key(|r| r.0);
    let unexpected: Vec<u32> = report
        .iter()
        .filter(|r| !r.2.pass && !KNOWN_DEVIATIONS.contains(&r.0))
        .map(|r| r.0)
        .collect();
    let passed = report.iter().filter(|r| r.2.pass).count();
    println!(
        "summary: {passed}/{} criteria pass in {:.0}s",
        report.len(),
        started.elapsed().as_secs_f64()
    );
    for (id, name, out, _) in &report {
        if !out.pass && KNOWN_DEVIATIONS.contains(id) {
            println!("criterion {id} [{name}]: FAIL is a known deviation");
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
