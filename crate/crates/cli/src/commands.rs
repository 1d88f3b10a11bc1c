//! The subcommands. Each one validates everything it reads before creating
//! its output, then writes into a staged directory that is renamed into
//! place only when complete.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;
use smpc_core::feasibility::{
    min_scenarios, min_scenarios_with_discards, violation_bound_with_discards, violation_confidence_bound,
};
use smpc_core::scenario::{generate_synthetic_db, ingest_route_db, write_route_db, MANIFEST_FILE};
use smpc_core::simulator::{resample_log_by_distance, ComparisonRow};
use smpc_core::solver::{read_problem_bundle, write_problem_bundle, write_result_bundle};
use smpc_core::{
    compare_controllers, run_closed_loop, synthetic_problem, AdmmSolver, AdmmState, ControllerKind, ExperimentConfig,
    RouteDatabase, SimulationLog,
};

use crate::output::{describe_inputs, Staged};
use crate::Controller;

fn load_db(dir: &Path) -> Result<(RouteDatabase, Vec<PathBuf>)> {
    let db = ingest_route_db(dir).with_context(|| format!("reading route database {}", dir.display()))?;
    let mut inputs = vec![dir.join(MANIFEST_FILE)];
    inputs.extend(db.journeys.iter().map(|j| dir.join(format!("{}.csv", j.id))));
    inputs.retain(|p| p.exists());
    Ok((db, inputs))
}

fn check_spacing(spacing: f64) -> Result<()> {
    ensure!(spacing > 0.0 && spacing.is_finite(), "distance spacing must be positive, got {spacing}");
    Ok(())
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Counts of update solve times per decade, from 10 µs to 100 s.
fn solve_time_histogram(logs: &[&SimulationLog]) -> serde_json::Value {
    let edges: Vec<f64> = (-5..=2).map(|e| 10f64.powi(e)).collect();
    let mut counts = vec![0usize; edges.len() + 1];
    let mut total = 0.0;
    let mut worst = 0.0f64;
    let mut n = 0usize;
    for r in logs.iter().flat_map(|l| &l.records) {
        counts[edges.partition_point(|&e| e <= r.solve_time_s)] += 1;
        total += r.solve_time_s;
        worst = worst.max(r.solve_time_s);
        n += 1;
    }
    json!({
        "upper_edges_s": edges,
        "counts": counts,
        "updates": n,
        "mean_s": if n == 0 { 0.0 } else { total / n as f64 },
        "max_s": worst,
    })
}

fn log_timings(logs: &[&SimulationLog]) -> serde_json::Value {
    let per_log: Vec<_> = logs
        .iter()
        .map(|l| {
            json!({
                "journey": l.journey,
                "controller": l.controller,
                "first_solve_s": l.first_solve_time(),
                "total_solve_s": l.records.iter().map(|r| r.solve_time_s).sum::<f64>(),
            })
        })
        .collect();
    json!({ "runs": per_log, "solve_time_histogram": solve_time_histogram(logs) })
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path, seed: u64, journeys: usize) -> Result<()> {
    ensure!(journeys >= 1, "need at least one journey");
    let db = generate_synthetic_db(&cfg.synthetic, journeys, seed)?;
    let mut staged = Staged::new(out, "gen-data")?;
    let description = format!("synthetic route, {journeys} journeys, seed {seed}");
    write_route_db(&db, staged.path(), &description)?;
    staged.record("seed", seed)?;
    staged.record("journeys", journeys)?;
    staged.record("synthetic", &cfg.synthetic)?;
    let path = staged.commit()?;
    println!("wrote {journeys} journeys to {}", path.display());
    Ok(())
}

pub fn simulate(
    cfg: &ExperimentConfig,
    db_dir: &Path,
    journey: &str,
    controller: Controller,
    out: &Path,
    spacing: f64,
) -> Result<()> {
    check_spacing(spacing)?;
    let (db, inputs) = load_db(db_dir)?;
    let Some(j) = db.journey(journey) else {
        bail!("journey {journey} is not in {}", db_dir.display());
    };
    if controller == Controller::Scenario {
        ensure!(db.journeys.len() >= 2, "scenario MPC needs at least one other journey");
    }
    let mut staged = Staged::new(out, "simulate")?;
    let kind = match controller {
        Controller::Nominal => ControllerKind::NominalMpc,
        Controller::Scenario => ControllerKind::ScenarioMpc { database: &db, generation: &cfg.scenario },
    };
    let log = run_closed_loop(j, kind, cfg)?;
    log.write_csv_file(&staged.path().join("log.csv"))?;
    resample_log_by_distance(&log, spacing)?.write_csv(File::create(staged.path().join("distance.csv"))?)?;
    let row = ComparisonRow::from_log(&log);
    write_csv_rows(&staged.path().join("summary.csv"), std::slice::from_ref(&row))?;

    staged.record("inputs", describe_inputs(&inputs)?)?;
    staged.record("journey", journey)?;
    staged.record("controller", log.controller.as_str())?;
    staged.record("config", cfg.to_toml_string())?;
    staged.record("summary", &row)?;
    staged.time("solves", log_timings(&[&log]))?;
    let path = staged.commit()?;
    println!(
        "{} {}: fuel {:.4} kg, final SOC {:.2}%, max violation {:.3}% -> {}",
        row.journey,
        row.controller,
        row.fuel_kg,
        row.final_soc_percent,
        row.max_violation_percent,
        path.display()
    );
    Ok(())
}

pub fn compare(
    cfg: &ExperimentConfig,
    db_dir: &Path,
    out: &Path,
    journeys: Option<&[String]>,
    spacing: f64,
) -> Result<()> {
    check_spacing(spacing)?;
    let (db, inputs) = load_db(db_dir)?;
    ensure!(db.journeys.len() >= 2, "comparison needs at least two journeys");
    if let Some(ids) = journeys {
        ensure!(!ids.is_empty(), "empty journey list");
        for id in ids {
            ensure!(db.journey(id).is_some(), "journey {id} is not in {}", db_dir.display());
        }
    }
    let mut staged = Staged::new(out, "compare")?;
    let report = compare_controllers(&db, cfg, journeys)?;
    report.write_summary_csv(File::create(staged.path().join("summary.csv"))?)?;
    let logs_dir = staged.subdir("logs")?;
    let dist_dir = staged.subdir("distance")?;
    let mut all = Vec::new();
    for (a, b) in &report.logs {
        for log in [a, b] {
            let name = format!("{}_{}.csv", log.journey, log.controller);
            log.write_csv_file(&logs_dir.join(&name))?;
            resample_log_by_distance(log, spacing)?.write_csv(File::create(dist_dir.join(&name))?)?;
            all.push(log);
        }
    }
    staged.record("inputs", describe_inputs(&inputs)?)?;
    staged.record("journeys", report.logs.iter().map(|(a, _)| a.journey.as_str()).collect::<Vec<_>>())?;
    staged.record("config", cfg.to_toml_string())?;
    staged.time("solves", log_timings(&all))?;
    let path = staged.commit()?;

    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:<16} {:<9} {:>10} {:>9} {:>10}", "journey", "controller", "fuel_kg", "soc_%", "viol_%")?;
    for r in &report.rows {
        writeln!(
            stdout,
            "{:<16} {:<9} {:>10.4} {:>9.2} {:>10.3}",
            r.journey, r.controller, r.fuel_kg, r.final_soc_percent, r.max_violation_percent
        )?;
    }
    writeln!(stdout, "wrote {}", path.display())?;
    Ok(())
}

pub enum ProblemSource {
    Bundle(PathBuf),
    Synthetic { n: usize, s: usize, seed: u64 },
}

pub fn solve(cfg: &ExperimentConfig, source: ProblemSource, midpoint_start: bool, out: &Path) -> Result<()> {
    let (problem, inputs) = match &source {
        ProblemSource::Bundle(dir) => {
            let p = read_problem_bundle(dir).with_context(|| format!("reading problem bundle {}", dir.display()))?;
            let files = ["problem.toml", "steps.csv"].map(|f| dir.join(f)).to_vec();
            (p, describe_inputs(&files)?)
        }
        ProblemSource::Synthetic { n, s, seed } => (synthetic_problem(cfg, *n, *s, *seed)?, Vec::new()),
    };
    let mut solver = AdmmSolver::new(&problem, cfg.admm.clone())?;
    let mut staged = Staged::new(out, "solve")?;
    if let ProblemSource::Synthetic { n, s, seed } = source {
        write_problem_bundle(&problem, &staged.subdir("problem")?)?;
        staged.record("synthetic", json!({ "horizon": n, "scenarios": s, "seed": seed }))?;
    }
    let init = midpoint_start.then(|| AdmmState::cold_start(&problem));
    let result = solver.solve(&problem, init);
    write_result_bundle(&result, staged.path())?;
    staged.record("inputs", inputs)?;
    staged.record("start", if midpoint_start { "midpoint" } else { "decoupled" })?;
    staged.record("admm", &cfg.admm)?;
    staged.time("solve_s", result.solve_time_s)?;
    staged.time("per_iteration_s", result.solve_time_s / result.iterations.max(1) as f64)?;
    let path = staged.commit()?;
    println!(
        "N {} S {}: {} after {} iterations (primal {:.3e}, dual {:.3e}), tau {:.1} W, fuel {:.5} kg, {:.3} s -> {}",
        problem.horizon_len(),
        problem.scenario_count(),
        if result.converged { "converged" } else { "not converged" },
        result.iterations,
        result.primal_residual_norm,
        result.dual_residual_norm,
        result.tau_opt,
        result.objective,
        result.solve_time_s,
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BoundRow {
    epsilon: f64,
    beta: f64,
    min_scenarios: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_scenarios_discarding: Option<usize>,
}

#[derive(Serialize)]
struct CurveRow {
    epsilon: f64,
    scenarios: usize,
    violation_bound: f64,
    /// Empty when nothing is discarded or too few samples exist to discard.
    violation_bound_discarding: Option<f64>,
}

pub fn bound(eps: &[f64], beta: &[f64], discarded: Option<usize>, curve_max: usize, out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::with_capacity(eps.len() * beta.len());
    for &e in eps {
        for &b in beta {
            rows.push(BoundRow {
                epsilon: e,
                beta: b,
                min_scenarios: min_scenarios(e, b)?,
                min_scenarios_discarding: discarded.map(|r| min_scenarios_with_discards(e, b, r)).transpose()?,
            });
        }
    }
    let Some(out) = out else {
        if let ([row], None) = (rows.as_slice(), discarded) {
            println!("{}", row.min_scenarios);
        } else {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        return Ok(());
    };
    ensure!(curve_max >= 1, "curve-max must be at least 1");
    let mut curve = Vec::with_capacity(eps.len() * curve_max);
    for &e in eps {
        for s in 1..=curve_max {
            curve.push(CurveRow {
                epsilon: e,
                scenarios: s,
                violation_bound: violation_confidence_bound(e, s)?,
                violation_bound_discarding: match discarded {
                    Some(r) if r < s => Some(violation_bound_with_discards(e, s, r)?),
                    _ => None,
                },
            });
        }
    }
    let mut staged = Staged::new(out, "bound")?;
    write_csv_rows(&staged.path().join("bound.csv"), &rows)?;
    write_csv_rows(&staged.path().join("curve.csv"), &curve)?;
    staged.record("epsilon", eps)?;
    staged.record("beta", beta)?;
    staged.record("discarded", discarded)?;
    let path = staged.commit()?;
    println!("wrote {} bounds to {}", rows.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    horizon: usize,
    scenarios: usize,
    iterations: usize,
    median_iteration_s: f64,
    ns_per_step_scenario: f64,
}

/// Median wall time of one ADMM iteration on a synthetic problem of the
/// given size, after a few untimed iterations.
pub fn median_iteration_time(cfg: &ExperimentConfig, n: usize, s: usize, iterations: usize, seed: u64) -> Result<f64> {
    let problem = synthetic_problem(cfg, n, s, seed)?;
    let mut solver = AdmmSolver::new(&problem, cfg.admm.clone())?;
    let mut st = solver.decoupled_start(&problem);
    for _ in 0..3 {
        solver.iterate(&mut st);
    }
    let mut times: Vec<f64> = (0..iterations)
        .map(|_| {
            let t = Instant::now();
            solver.iterate(&mut st);
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

pub fn bench(
    cfg: &ExperimentConfig,
    horizons: &[usize],
    scenario_counts: &[usize],
    iterations: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    ensure!(iterations >= 1, "need at least one timed iteration");
    ensure!(horizons.iter().chain(scenario_counts).all(|&v| v > 0), "grid sizes must be positive");
    let mut staged = Staged::new(out, "bench")?;
    let mut rows = Vec::new();
    for &n in horizons {
        for &s in scenario_counts {
            let median = median_iteration_time(cfg, n, s, iterations, seed)?;
            let row = BenchRow {
                horizon: n,
                scenarios: s,
                iterations,
                median_iteration_s: median,
                ns_per_step_scenario: 1e9 * median / (n * s) as f64,
            };
            println!("N {n:>5} S {s:>3}: {:.3} ms per iteration", 1e3 * median);
            rows.push(row);
        }
    }
    // every value in bench.csv is a measurement, so it sits with the timings
    write_csv_rows(&staged.path().join("bench.csv"), &rows)?;
    staged.record("seed", seed)?;
    staged.record("horizons", horizons)?;
    staged.record("scenario_counts", scenario_counts)?;
    staged.record("iterations", iterations)?;
    staged.record("admm", &cfg.admm)?;
    staged.time("grid", &rows)?;
    let path = staged.commit()?;
    println!("wrote {}", path.display());
    Ok(())
}
