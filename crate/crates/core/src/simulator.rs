//! 1 Hz closed-loop simulation of a recorded journey.
//!
//! Each second the controller builds its prediction(s) from the current
//! measurement, solves the power-split problem and applies the first input
//! for one second. The plant uses the same maps as the controller, so the only
//! mismatch between prediction and reality is the driver's behaviour.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::feasibility::{certify_mpc, ENERGY_TOL};
use crate::horizon::{
    apply_heuristics, assemble_horizon, assemble_step, DriverScenario, HeuristicPolicy, HorizonStep, ScenarioHorizon,
};
use crate::powertrain::{fuel_rate, motor_electrical, Powertrain};
use crate::scenario::{
    generate, generate_synthetic_db, position_now, resample_to_time, JourneyRecord, LiveState, RouteDatabase,
};
use crate::solver::{AdmmSolver, AdmmState, SmpcProblem, SolveResult};

/// Which controller drives the simulation.
#[derive(Clone, Copy, Debug)]
pub enum ControllerKind<'a> {
    /// One scenario equal to the journey's true future.
    NominalMpc,
    /// Scenarios from every other journey in `database`.
    ScenarioMpc { database: &'a RouteDatabase, generation: &'a ScenarioConfig },
}

impl ControllerKind<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Self::NominalMpc => "nominal",
            Self::ScenarioMpc { .. } => "scenario",
        }
    }
}

/// How the applied input was obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    /// Solver converged.
    #[default]
    Solved,
    /// Solver hit its iteration limit; its last iterate was applied.
    NotConverged,
    /// The engine had to be switched on for this second to keep the problem
    /// (or the step itself) feasible; the solver was then run as usual.
    EngineForced,
    /// No scenario admitted a feasible plan; the first input nearest to the
    /// bound under threat was applied.
    Infeasible,
    /// The step could not be assembled; the engine-on heuristic split was
    /// applied.
    Heuristic,
}

/// One second of simulation. Speeds, gradient and position are measured at
/// the start of the interval; energy and fuel at its end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time_s: f64,
    pub position_m: f64,
    pub velocity_mps: f64,
    pub gradient_rad: f64,
    pub energy_j: f64,
    pub soc_percent: f64,
    /// Cumulative.
    pub fuel_kg: f64,
    pub u_w: f64,
    pub engine_power_w: f64,
    pub motor_power_w: f64,
    pub brake_power_w: f64,
    pub gear_ratio: f64,
    pub engine_on: bool,
    pub scenarios: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub outcome: StepOutcome,
    /// Distance outside the energy window at the end of the interval, J.
    pub violation_j: f64,
    /// Wall time of this update's solve. Not written to CSV, so that logs are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub solve_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub journey: String,
    pub controller: String,
    pub initial_energy: f64,
    pub capacity: f64,
    pub records: Vec<StepRecord>,
}

impl SimulationLog {
    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(self.initial_energy, |r| r.energy_j)
    }

    pub fn total_fuel(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.fuel_kg)
    }

    /// Largest excursion outside the energy window, percent of capacity.
    pub fn max_violation_percent(&self) -> f64 {
        100.0 * self.records.iter().map(|r| r.violation_j).fold(0.0, f64::max) / self.capacity
    }

    pub fn count(&self, outcome: StepOutcome) -> usize {
        self.records.iter().filter(|r| r.outcome == outcome).count()
    }

    /// Solve time of the first update, the one with the longest horizon.
    pub fn first_solve_time(&self) -> f64 {
        self.records.first().map_or(0.0, |r| r.solve_time_s)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// The input applied when the engine is on but nothing better is known: the
/// motor idles and the engine delivers the axle power, within the step's box.
pub fn heuristic_split(step: &HorizonStep) -> f64 {
    let idle = crate::powertrain::battery_internal_unchecked(
        motor_electrical(0.0, &step.beta).unwrap_or(step.beta.c0),
        step.voltage,
        step.resistance,
    );
    if step.engine_on {
        idle.clamp(step.u_lo, step.u_hi)
    } else {
        step.u_lo
    }
}

/// The true behaviour of `journey` from the start of the route, at 1 Hz.
fn true_behaviour(journey: &JourneyRecord) -> Result<DriverScenario> {
    let r = resample_to_time(journey, 0.0)?;
    let v_dot = r.acceleration();
    DriverScenario::new(r.v, r.theta, v_dot)
}

fn certify_single(x_now: f64, h: &ScenarioHorizon, x_lo: f64, x_hi: f64) -> bool {
    certify_mpc(x_now, &h.u_lo(), &h.u_hi(), x_lo, x_hi).is_ok_and(|r| r.feasible)
}

fn tail(s: &DriverScenario, from: usize) -> DriverScenario {
    DriverScenario { v: s.v[from..].to_vec(), theta: s.theta[from..].to_vec(), v_dot: s.v_dot[from..].to_vec() }
}

/// What the controller decided for one second.
struct Decision {
    step: HorizonStep,
    u: f64,
    scenarios: usize,
    horizon: usize,
    iterations: usize,
    outcome: StepOutcome,
    solve_time_s: f64,
}

struct Controller<'a> {
    kind: ControllerKind<'a>,
    journey_id: &'a str,
    cfg: &'a ExperimentConfig,
    policy: HeuristicPolicy,
    warm: Option<AdmmState>,
}

impl Controller<'_> {
    fn pt(&self) -> &Powertrain {
        &self.cfg.powertrain
    }

    fn predictions(&self, truth: &DriverScenario, t: usize, l: f64) -> Result<Vec<DriverScenario>> {
        match self.kind {
            ControllerKind::NominalMpc => Ok(vec![tail(truth, t)]),
            ControllerKind::ScenarioMpc { database, generation } => {
                let live = LiveState { v: truth.v[t], theta: truth.theta[t], v_dot: truth.v_dot[t] };
                Ok(generate(database, Some(self.journey_id), &live, l, generation)?.scenarios)
            }
        }
    }

    /// The step actually faced now, optionally with the engine forced on.
    fn current_step(&self, truth: &DriverScenario, t: usize, force_engine: bool) -> Result<HorizonStep> {
        let now = DriverScenario { v: vec![truth.v[t]], theta: vec![truth.theta[t]], v_dot: vec![truth.v_dot[t]] };
        let mut d = apply_heuristics(&now, &self.policy, &self.pt().vehicle)[0];
        d.engine_on |= force_engine;
        assemble_step(truth.v[t], &d, self.pt())
    }

    fn decide(&mut self, truth: &DriverScenario, t: usize, l: f64, x_now: f64) -> Result<Decision> {
        let b = &self.pt().battery;
        let (x_lo, x_hi) = (b.soc_min, b.soc_max);
        let step0 = match self.current_step(truth, t, false) {
            Ok(s) => s,
            Err(_) => {
                let step = self.current_step(truth, t, true)?;
                self.warm = None;
                return Ok(Decision { u: heuristic_split(&step), step, scenarios: 0, horizon: 0, iterations: 0, outcome: StepOutcome::Heuristic, solve_time_s: 0.0 });
            }
        };
        // the engine must come on if the electric-only step leaves the window
        let keeps_window = |s: &HorizonStep| x_now - s.u_hi <= x_hi + ENERGY_TOL && x_now - s.u_lo >= x_lo - ENERGY_TOL;
        let mut forced = false;
        let step0 = if !step0.engine_on && !keeps_window(&step0) {
            forced = true;
            self.current_step(truth, t, true)?
        } else {
            step0
        };

        let predictions = self.predictions(truth, t, l)?;
        let policy = &self.policy;
        let mut horizons: Vec<ScenarioHorizon> = Vec::with_capacity(predictions.len());
        for p in &predictions {
            // a scenario whose future cannot be assembled is dropped
            if let Ok(mut h) = assemble_horizon(p, policy, self.pt(), x_now.clamp(0.0, b.capacity)) {
                h.steps[0] = step0;
                horizons.push(ScenarioHorizon::from_steps(h.steps));
            }
        }
        let mut feasible: Vec<ScenarioHorizon> =
            horizons.into_iter().filter(|h| certify_single(x_now, h, x_lo, x_hi)).collect();
        if feasible.is_empty() && !forced && !step0.engine_on {
            // switching the engine on may rescue the plan
            let on = self.current_step(truth, t, true)?;
            let rescued: Vec<ScenarioHorizon> = predictions
                .iter()
                .filter_map(|p| assemble_horizon(p, policy, self.pt(), x_now.clamp(0.0, b.capacity)).ok())
                .map(|mut h| {
                    h.steps[0] = on;
                    ScenarioHorizon::from_steps(h.steps)
                })
                .filter(|h| certify_single(x_now, h, x_lo, x_hi))
                .collect();
            if !rescued.is_empty() {
                forced = true;
                feasible = rescued;
            }
        }
        let step0 = feasible.first().map_or(step0, |h| h.steps[0]);
        if feasible.is_empty() {
            self.warm = None;
            let u = if x_now - x_lo < x_hi - x_now { step0.u_lo } else { step0.u_hi };
            return Ok(Decision { step: step0, u, scenarios: 0, horizon: 0, iterations: 0, outcome: StepOutcome::Infeasible, solve_time_s: 0.0 });
        }

        let problem = SmpcProblem::new(feasible, x_now, x_lo, x_hi)?;
        let mut admm = self.cfg.admm.clone();
        if let Some(m) = self.cfg.simulation.max_iterations_per_update {
            admm.max_iterations = m;
        }
        let mut solver = AdmmSolver::new(&problem, admm)?;
        let init = self.warm.take().and_then(|w| solver.warm_start(&problem, &w));
        let res: SolveResult = solver.solve(&problem, init);
        let outcome = if forced {
            StepOutcome::EngineForced
        } else if res.converged {
            StepOutcome::Solved
        } else {
            StepOutcome::NotConverged
        };
        let decision = Decision {
            step: step0,
            u: res.tau_opt.clamp(step0.u_lo, step0.u_hi),
            scenarios: problem.scenario_count(),
            horizon: problem.horizon_len(),
            iterations: res.iterations,
            outcome,
            solve_time_s: res.solve_time_s,
        };
        if self.cfg.simulation.warm_start {
            self.warm = Some(res.state);
        }
        Ok(decision)
    }
}

/// Drive `journey` under `kind`, starting from the configured state of charge.
pub fn run_closed_loop(journey: &JourneyRecord, kind: ControllerKind<'_>, cfg: &ExperimentConfig) -> Result<SimulationLog> {
    run_closed_loop_with(journey, kind, cfg, |_| {})
}

/// [`run_closed_loop`], calling `on_step` with every record as it is produced.
pub fn run_closed_loop_with(
    journey: &JourneyRecord,
    kind: ControllerKind<'_>,
    cfg: &ExperimentConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<SimulationLog> {
    cfg.validate()?;
    journey.validate()?;
    if let ControllerKind::ScenarioMpc { database, .. } = kind {
        if database.journeys.iter().all(|j| j.id == journey.id) {
            return Err(Error::NoScenarios(format!("no journeys other than {} to predict from", journey.id)));
        }
    }
    let truth = true_behaviour(journey)?;
    simulate(&journey.id, journey.route_length(), &truth, kind, cfg, &mut on_step)
}

/// The closed loop over a given true behaviour sampled at 1 Hz.
fn simulate(
    journey_id: &str,
    route_length: f64,
    truth: &DriverScenario,
    kind: ControllerKind<'_>,
    cfg: &ExperimentConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<SimulationLog> {
    let pt = &cfg.powertrain;
    let b = &pt.battery;
    let mut log = SimulationLog {
        journey: journey_id.to_owned(),
        controller: kind.label().to_owned(),
        initial_energy: cfg.initial_energy(),
        capacity: b.capacity,
        records: Vec::with_capacity(truth.len()),
    };
    let mut ctl = Controller { kind, journey_id, cfg, policy: cfg.policy(), warm: None };
    let mut x = log.initial_energy;
    let mut fuel = 0.0;
    for t in 0..truth.len() {
        let l = position_now(&truth.v[..t]).min(route_length);
        let d = ctl.decide(truth, t, l, x)?;
        let st = &d.step;
        let p_em = st.motor_power(d.u);
        let p_eng = st.engine_power(d.u);
        if st.engine_on {
            fuel += fuel_rate(p_eng, &st.alpha)?;
        }
        x -= d.u;
        let violation = (b.soc_min - x).max(x - b.soc_max).max(0.0);
        log.records.push(StepRecord {
            time_s: t as f64,
            position_m: l,
            velocity_mps: truth.v[t],
            gradient_rad: truth.theta[t],
            energy_j: x,
            soc_percent: b.percent(x),
            fuel_kg: fuel,
            u_w: d.u,
            engine_power_w: p_eng,
            motor_power_w: p_em,
            brake_power_w: st.p_brk,
            gear_ratio: st.ratio,
            engine_on: st.engine_on,
            scenarios: d.scenarios,
            horizon: d.horizon,
            iterations: d.iterations,
            outcome: d.outcome,
            violation_j: violation,
            solve_time_s: d.solve_time_s,
        });
        on_step(log.records.last().expect("just pushed"));
    }
    Ok(log)
}

/// State of charge and fuel against distance travelled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceSeries {
    pub distance_m: Vec<f64>,
    pub soc_percent: Vec<f64>,
    pub fuel_kg: Vec<f64>,
}

#[derive(Serialize)]
struct DistanceRow {
    distance_m: f64,
    soc_percent: f64,
    fuel_kg: f64,
}

impl DistanceSeries {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for i in 0..self.distance_m.len() {
            w.serialize(DistanceRow {
                distance_m: self.distance_m[i],
                soc_percent: self.soc_percent[i],
                fuel_kg: self.fuel_kg[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Interpolate the log's state of charge and fuel onto distances
/// `0, spacing, 2 spacing, ...` up to the distance finally covered. The log
/// is read as the points (distance, state) at each second; seconds that do
/// not advance collapse to their last value.
pub fn resample_log_by_distance(log: &SimulationLog, spacing: f64) -> Result<DistanceSeries> {
    if log.records.is_empty() {
        return Err(Error::invalid("cannot resample an empty log"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid("distance spacing must be positive"));
    }
    // knots: start of the journey, then the end of every interval
    let n = log.records.len();
    let mut dist = Vec::with_capacity(n + 1);
    let mut soc = Vec::with_capacity(n + 1);
    let mut fuel = Vec::with_capacity(n + 1);
    let first = &log.records[0];
    dist.push(first.position_m);
    soc.push(100.0 * log.initial_energy / log.capacity);
    fuel.push(0.0);
    for (i, r) in log.records.iter().enumerate() {
        let end = log.records.get(i + 1).map_or(r.position_m + r.velocity_mps, |next| next.position_m);
        if end <= *dist.last().expect("non-empty") {
            // no advance: the later value wins
            *soc.last_mut().expect("non-empty") = r.soc_percent;
            *fuel.last_mut().expect("non-empty") = r.fuel_kg;
        } else {
            dist.push(end);
            soc.push(r.soc_percent);
            fuel.push(r.fuel_kg);
        }
    }
    let total = *dist.last().expect("non-empty");
    let count = ((total - dist[0]) / spacing).floor() as usize + 1;
    let mut out = DistanceSeries::default();
    let mut seg = 0;
    for i in 0..count {
        let d = dist[0] + i as f64 * spacing;
        while seg + 2 < dist.len() && dist[seg + 1] < d {
            seg += 1;
        }
        let (a, b) = (seg, (seg + 1).min(dist.len() - 1));
        let w = if b > a { ((d - dist[a]) / (dist[b] - dist[a])).clamp(0.0, 1.0) } else { 0.0 };
        out.distance_m.push(d);
        out.soc_percent.push(soc[a] + w * (soc[b] - soc[a]));
        out.fuel_kg.push(fuel[a] + w * (fuel[b] - fuel[a]));
    }
    Ok(out)
}

/// One row of the controller comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub journey: String,
    pub controller: String,
    pub duration_s: usize,
    pub fuel_kg: f64,
    pub final_soc_percent: f64,
    pub max_violation_percent: f64,
    pub violation_steps: usize,
    pub not_converged_steps: usize,
    pub engine_forced_steps: usize,
    pub infeasible_steps: usize,
    pub mean_iterations: f64,
}

impl ComparisonRow {
    pub fn from_log(log: &SimulationLog) -> Self {
        let n = log.records.len();
        Self {
            journey: log.journey.clone(),
            controller: log.controller.clone(),
            duration_s: n,
            fuel_kg: log.total_fuel(),
            final_soc_percent: 100.0 * log.final_energy() / log.capacity,
            max_violation_percent: log.max_violation_percent(),
            violation_steps: log.records.iter().filter(|r| r.violation_j > 0.0).count(),
            not_converged_steps: log.count(StepOutcome::NotConverged),
            engine_forced_steps: log.count(StepOutcome::EngineForced),
            infeasible_steps: log.count(StepOutcome::Infeasible) + log.count(StepOutcome::Heuristic),
            mean_iterations: if n == 0 { 0.0 } else { log.records.iter().map(|r| r.iterations as f64).sum::<f64>() / n as f64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Nominal and scenario logs for each journey, in database order.
    pub logs: Vec<(SimulationLog, SimulationLog)>,
}

impl ComparisonReport {
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// For every journey (or those in `only`), run nominal MPC with perfect
/// preview and scenario MPC learning from all the other journeys.
pub fn compare_controllers(db: &RouteDatabase, cfg: &ExperimentConfig, only: Option<&[String]>) -> Result<ComparisonReport> {
    use rayon::prelude::*;
    if db.journeys.len() < 2 {
        return Err(Error::NoScenarios("comparison needs at least two journeys".into()));
    }
    let selected: Vec<&JourneyRecord> = match only {
        Some(ids) => ids
            .iter()
            .map(|id| db.journey(id).ok_or_else(|| Error::invalid(format!("unknown journey {id}"))))
            .collect::<Result<_>>()?,
        None => db.journeys.iter().collect(),
    };
    let logs = selected
        .par_iter()
        .map(|j| {
            let nominal = run_closed_loop(j, ControllerKind::NominalMpc, cfg)?;
            let kind = ControllerKind::ScenarioMpc { database: db, generation: &cfg.scenario };
            let scenario = run_closed_loop(j, kind, cfg)?;
            Ok((nominal, scenario))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = logs.iter().flat_map(|(a, b)| [ComparisonRow::from_log(a), ComparisonRow::from_log(b)]).collect();
    Ok(ComparisonReport { rows, logs })
}

/// The first scenario-MPC problem of a seeded synthetic journey, with `s`
/// scenarios from other journeys and the horizon cut to `n` steps. The route
/// is lengthened as needed so that every scenario lasts at least `n` seconds;
/// longer routes have longer climbs, so the lower energy bound is typically
/// active. Used for timing studies.
pub fn synthetic_problem(cfg: &ExperimentConfig, n: usize, s: usize, seed: u64) -> Result<SmpcProblem> {
    if n == 0 || s == 0 {
        return Err(Error::invalid("synthetic problems need at least one step and one scenario"));
    }
    let mut syn = cfg.synthetic.clone();
    let top_speed = 1.2 * syn.cruise_speed_mps + 3.0 * syn.fluctuation_mps;
    syn.route_length_m = syn.route_length_m.max((n as f64 * top_speed).ceil() as usize);
    let db = generate_synthetic_db(&syn, s + 1, seed)?;
    let generation = ScenarioConfig { horizon_cap: Some(n), max_scenarios: Some(s), ..cfg.scenario.clone() };
    let live = LiveState { v: 0.0, theta: syn.gradient_at(0.0), v_dot: 0.0 };
    let set = generate(&db, Some(&db.journeys[0].id), &live, 0.0, &generation)?;
    let policy = cfg.policy();
    let x0 = cfg.initial_energy();
    let horizons = set
        .scenarios
        .iter()
        .map(|p| assemble_horizon(p, &policy, &cfg.powertrain, x0))
        .collect::<Result<Vec<_>>>()?;
    let b = &cfg.powertrain.battery;
    SmpcProblem::new(horizons, x0, b.soc_min, b.soc_max)
}
