//! Text serialisation of problems and solutions: a small TOML header next to
//! CSV tables, so instances can be inspected, edited and plotted by hand.
//!
//! A problem bundle is a directory holding `problem.toml` (energies) and
//! `steps.csv` (one row per scenario and step). A result bundle holds
//! `result.toml` (summary), `trajectory.csv` (u and x per scenario and step)
//! and `trace.csv` (residual norms per iteration).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::admm::{SmpcProblem, SolveResult};
use crate::error::{Error, Result};
use crate::horizon::{HorizonStep, ScenarioHorizon};
use crate::powertrain::Quadratic;

pub const PROBLEM_FILE: &str = "problem.toml";
pub const STEPS_FILE: &str = "steps.csv";
pub const RESULT_FILE: &str = "result.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemHeader {
    x_now: f64,
    x_lo: f64,
    x_hi: f64,
    scenarios: usize,
    horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StepRow {
    scenario: usize,
    k: usize,
    p: f64,
    omega_eng: f64,
    omega_em: f64,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    beta0: f64,
    beta1: f64,
    beta2: f64,
    voltage: f64,
    resistance: f64,
    u_lo: f64,
    u_hi: f64,
    engine_on: bool,
    ratio: f64,
    p_drv: f64,
    p_brk: f64,
}

impl StepRow {
    fn new(scenario: usize, k: usize, s: &HorizonStep) -> Self {
        Self {
            scenario,
            k,
            p: s.p,
            omega_eng: s.omega_eng,
            omega_em: s.omega_em,
            alpha0: s.alpha.c0,
            alpha1: s.alpha.c1,
            alpha2: s.alpha.c2,
            beta0: s.beta.c0,
            beta1: s.beta.c1,
            beta2: s.beta.c2,
            voltage: s.voltage,
            resistance: s.resistance,
            u_lo: s.u_lo,
            u_hi: s.u_hi,
            engine_on: s.engine_on,
            ratio: s.ratio,
            p_drv: s.p_drv,
            p_brk: s.p_brk,
        }
    }

    fn step(&self) -> HorizonStep {
        HorizonStep {
            p: self.p,
            omega_eng: self.omega_eng,
            omega_em: self.omega_em,
            alpha: Quadratic::new(self.alpha0, self.alpha1, self.alpha2),
            beta: Quadratic::new(self.beta0, self.beta1, self.beta2),
            voltage: self.voltage,
            resistance: self.resistance,
            u_lo: self.u_lo,
            u_hi: self.u_hi,
            engine_on: self.engine_on,
            ratio: self.ratio,
            p_drv: self.p_drv,
            p_brk: self.p_brk,
        }
    }
}

fn data_err(path: &Path, reason: impl ToString) -> Error {
    Error::Data { path: path.to_owned(), reason: reason.to_string() }
}

/// Write `problem` into the existing directory `dir`.
pub fn write_problem_bundle(problem: &SmpcProblem, dir: &Path) -> Result<Vec<PathBuf>> {
    let header = ProblemHeader {
        x_now: problem.x_now,
        x_lo: problem.x_lo,
        x_hi: problem.x_hi,
        scenarios: problem.scenario_count(),
        horizon: problem.horizon_len(),
    };
    let header_path = dir.join(PROBLEM_FILE);
    fs::write(&header_path, toml::to_string(&header).expect("header serialises"))?;
    let steps_path = dir.join(STEPS_FILE);
    let mut w = csv::Writer::from_path(&steps_path)?;
    for (j, h) in problem.horizons.iter().enumerate() {
        for (k, s) in h.steps.iter().enumerate() {
            w.serialize(StepRow::new(j, k, s))?;
        }
    }
    w.flush()?;
    Ok(vec![header_path, steps_path])
}

/// Read and validate the problem bundle in `dir`.
pub fn read_problem_bundle(dir: &Path) -> Result<SmpcProblem> {
    let header_path = dir.join(PROBLEM_FILE);
    let text = fs::read_to_string(&header_path).map_err(|e| data_err(&header_path, e))?;
    let header: ProblemHeader = toml::from_str(&text).map_err(|e| data_err(&header_path, e))?;
    let steps_path = dir.join(STEPS_FILE);
    let mut rdr = csv::Reader::from_path(&steps_path).map_err(|e| data_err(&steps_path, e))?;
    let mut steps: Vec<Vec<HorizonStep>> = vec![Vec::with_capacity(header.horizon); header.scenarios];
    for (line, row) in rdr.deserialize::<StepRow>().enumerate() {
        let row = row.map_err(|e| data_err(&steps_path, e))?;
        let slot = steps
            .get_mut(row.scenario)
            .ok_or_else(|| data_err(&steps_path, format!("row {}: scenario {} out of range", line + 1, row.scenario)))?;
        if row.k != slot.len() {
            return Err(data_err(&steps_path, format!("row {}: steps of scenario {} out of order", line + 1, row.scenario)));
        }
        slot.push(row.step());
    }
    if steps.iter().any(|s| s.len() != header.horizon) {
        return Err(data_err(&steps_path, format!("expected {} steps for each of {} scenarios", header.horizon, header.scenarios)));
    }
    let horizons = steps.into_iter().map(ScenarioHorizon::from_steps).collect();
    SmpcProblem::new(horizons, header.x_now, header.x_lo, header.x_hi).map_err(|e| data_err(dir, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ResultSummary {
    tau_opt: f64,
    objective_kg: f64,
    iterations: usize,
    converged: bool,
    primal_residual_norm: f64,
    dual_residual_norm: f64,
    newton_fallbacks: usize,
}

#[derive(Serialize)]
struct TrajectoryRow {
    scenario: usize,
    k: usize,
    u_w: f64,
    x_j: f64,
}

/// Write `result` into the existing directory `dir`. Solve time is left out
/// so that the files depend only on the inputs.
pub fn write_result_bundle(result: &SolveResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let summary = ResultSummary {
        tau_opt: result.tau_opt,
        objective_kg: result.objective,
        iterations: result.iterations,
        converged: result.converged,
        primal_residual_norm: result.primal_residual_norm,
        dual_residual_norm: result.dual_residual_norm,
        newton_fallbacks: result.newton_fallbacks,
    };
    let summary_path = dir.join(RESULT_FILE);
    fs::write(&summary_path, toml::to_string(&summary).expect("summary serialises"))?;

    let traj_path = dir.join(TRAJECTORY_FILE);
    let mut w = csv::Writer::from_path(&traj_path)?;
    for (j, (us, xs)) in result.u_opt.iter().zip(&result.x_opt).enumerate() {
        for (k, (&u_w, &x_j)) in us.iter().zip(xs).enumerate() {
            w.serialize(TrajectoryRow { scenario: j, k, u_w, x_j })?;
        }
    }
    w.flush()?;

    let trace_path = dir.join(TRACE_FILE);
    let mut w = csv::Writer::from_path(&trace_path)?;
    for rec in &result.history {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(vec![summary_path, traj_path, trace_path])
}
