//! Scenario ADMM for the multi-scenario power-split problem.
//!
//! Variables are split into `(u, x)` — battery power and predicted energy per
//! scenario — and `(zeta, tau)` — a consensus copy of `u` and the common first
//! input. The constraints `u = zeta`, `x = 1 x(t) - Psi zeta` and
//! `u_{0,s} = tau` carry the scaled multipliers `nu`, `psi` and `phi`.
//! Each iteration solves independent scalar problems for `u`, projects for
//! `x`, averages for `tau`, does one tridiagonal solve per scenario for `zeta`
//! and then takes a dual ascent step, so its cost is linear in `N S`.
//!
//! Matrices are stored scenario-major: entry `(k, s)` lives at `s * n + k`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{certify_smpc, ENERGY_TOL};
use crate::horizon::ScenarioHorizon;
use crate::solver::scalar::{minimize_prox, StepCost};
use crate::solver::structured::{psi_t_mul, StructuredSolver};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    /// Penalty on `u = zeta`.
    pub rho1: f64,
    /// Penalty on the energy dynamics.
    pub rho2: f64,
    /// Penalty on the first-stage coupling.
    pub rho3: f64,
    /// Termination threshold on both residual norms.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// W
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Factor applied to the fuel term inside the iteration (kg to solver
    /// units). Reported objectives are always in kg.
    pub cost_scale: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho1: 2.34e-4,
            rho2: 8.86e-9,
            rho3: 2.34e-4,
            epsilon: 0.1,
            max_iterations: 20_000,
            newton_tol: 1e-6,
            newton_max_iter: 50,
            cost_scale: 3.0e5,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("rho3", self.rho3),
            ("epsilon", self.epsilon),
            ("newton_tol", self.newton_tol),
            ("cost_scale", self.cost_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("admm.{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_iterations == 0 || self.newton_max_iter == 0 {
            return Err(Error::invalid("admm iteration limits must be positive"));
        }
        Ok(())
    }
}

/// The scenario problem for one control update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmpcProblem {
    pub horizons: Vec<ScenarioHorizon>,
    /// Current battery energy, J.
    pub x_now: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl SmpcProblem {
    pub fn new(horizons: Vec<ScenarioHorizon>, x_now: f64, x_lo: f64, x_hi: f64) -> Result<Self> {
        let p = Self { horizons, x_now, x_lo, x_hi };
        p.validate()?;
        Ok(p)
    }

    pub fn horizon_len(&self) -> usize {
        self.horizons.first().map_or(0, ScenarioHorizon::len)
    }

    pub fn scenario_count(&self) -> usize {
        self.horizons.len()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.horizons.first() else {
            return Err(Error::NoScenarios("problem has no scenarios".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::invalid("problem horizon is empty"));
        }
        if let Some(s) = self.horizons.iter().position(|h| h.len() != n) {
            return Err(Error::invalid(format!("scenario {s} has length {} but scenario 0 has {n}", self.horizons[s].len())));
        }
        if !(self.x_lo <= self.x_hi) || !self.x_now.is_finite() {
            return Err(Error::invalid("invalid energy window or current energy"));
        }
        for h in &self.horizons {
            h.validate()?;
        }
        let (lo0, hi0) = (first.steps[0].u_lo, first.steps[0].u_hi);
        let tol = 1e-9 * lo0.abs().max(hi0.abs()).max(1.0);
        for (s, h) in self.horizons.iter().enumerate().skip(1) {
            let st = &h.steps[0];
            if (st.u_lo - lo0).abs() > tol || (st.u_hi - hi0).abs() > tol || st.engine_on != first.steps[0].engine_on {
                return Err(Error::invalid(format!("scenario {s} disagrees with scenario 0 at the first step")));
            }
        }
        Ok(())
    }

    /// Per-scenario `(u_lo, u_hi)` sequences.
    pub fn bounds(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.horizons.iter().map(|h| (h.u_lo(), h.u_hi())).collect()
    }

    /// Errors with the first empty reachable set if the problem is infeasible.
    pub fn certify(&self) -> Result<()> {
        let reports = certify_smpc(self.x_now, &self.bounds(), self.x_lo, self.x_hi)?;
        match reports.iter().filter_map(|r| r.first_failure).min() {
            Some(step) => Err(Error::InfeasibleProblem { step }),
            None => Ok(()),
        }
    }
}

/// Full iterate of the splitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub n: usize,
    pub s: usize,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub zeta: Vec<f64>,
    pub nu: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau: f64,
}

impl AdmmState {
    pub fn zeros(n: usize, s: usize) -> Self {
        let z = vec![0.0; n * s];
        Self { n, s, u: z.clone(), x: z.clone(), zeta: z.clone(), nu: z.clone(), psi: z, phi: vec![0.0; s], tau: 0.0 }
    }

    #[inline]
    pub fn idx(&self, k: usize, s: usize) -> usize {
        s * self.n + k
    }

    pub fn scenario<'a>(&self, m: &'a [f64], s: usize) -> &'a [f64] {
        &m[s * self.n..(s + 1) * self.n]
    }

    /// Box midpoints for `u` and `zeta`, the projected energy trajectory, zero
    /// multipliers and `tau` at the mean first input.
    pub fn cold_start(problem: &SmpcProblem) -> Self {
        let (n, s) = (problem.horizon_len(), problem.scenario_count());
        let mut st = Self::zeros(n, s);
        for (j, h) in problem.horizons.iter().enumerate() {
            for (k, step) in h.steps.iter().enumerate() {
                st.u[j * n + k] = if step.engine_on { 0.5 * (step.u_lo + step.u_hi) } else { step.u_lo };
            }
        }
        st.zeta.clone_from(&st.u);
        st.project_x(problem.x_now, problem.x_lo, problem.x_hi);
        st.tau = (0..s).map(|j| st.u[j * n]).sum::<f64>() / s as f64;
        st
    }

    /// `x = clip(1 x(t) - Psi zeta - psi)`.
    fn project_x(&mut self, x_now: f64, x_lo: f64, x_hi: f64) {
        for j in 0..self.s {
            let mut acc = 0.0;
            for k in 0..self.n {
                let i = j * self.n + k;
                acc += self.zeta[i];
                self.x[i] = (x_now - acc - self.psi[i]).clamp(x_lo, x_hi);
            }
        }
    }
}

/// Primal and dual residual blocks with their Euclidean norms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `u - zeta`, N×S.
    pub r_u: Vec<f64>,
    /// `x - 1 x(t) + Psi zeta`, N×S.
    pub r_x: Vec<f64>,
    /// `tau - u_{0,s}`, length S.
    pub r_tau: Vec<f64>,
    /// `rho1 (zeta_prev - zeta) + rho3 e_0 (tau_prev - tau)`, N×S.
    pub s_u: Vec<f64>,
    /// `rho2 Psi (zeta_prev - zeta)`, N×S.
    pub s_x: Vec<f64>,
    pub primal_norm: f64,
    pub dual_norm: f64,
}

impl Residuals {
    pub fn max_norm(&self) -> f64 {
        self.primal_norm.max(self.dual_norm)
    }
}

fn residuals_into(
    out: &mut Residuals,
    next: &AdmmState,
    zeta_prev: &[f64],
    tau_prev: f64,
    x_now: f64,
    cfg: &AdmmConfig,
) {
    let (n, s) = (next.n, next.s);
    let len = n * s;
    out.r_u.resize(len, 0.0);
    out.r_x.resize(len, 0.0);
    out.s_u.resize(len, 0.0);
    out.s_x.resize(len, 0.0);
    out.r_tau.resize(s, 0.0);
    let (mut primal, mut dual) = (0.0, 0.0);
    let d_tau = tau_prev - next.tau;
    for j in 0..s {
        let (mut cum_next, mut cum_diff) = (0.0, 0.0);
        for k in 0..n {
            let i = j * n + k;
            let dz = zeta_prev[i] - next.zeta[i];
            cum_next += next.zeta[i];
            cum_diff += dz;
            let ru = next.u[i] - next.zeta[i];
            let rx = next.x[i] - x_now + cum_next;
            let su = cfg.rho1 * dz + if k == 0 { cfg.rho3 * d_tau } else { 0.0 };
            let sx = cfg.rho2 * cum_diff;
            out.r_u[i] = ru;
            out.r_x[i] = rx;
            out.s_u[i] = su;
            out.s_x[i] = sx;
            primal += ru * ru + rx * rx;
            dual += su * su + sx * sx;
        }
        let rt = next.tau - next.u[j * n];
        out.r_tau[j] = rt;
        primal += rt * rt;
    }
    out.primal_norm = primal.sqrt();
    out.dual_norm = dual.sqrt();
}

/// Residuals of the iterate `next` reached from `prev`.
pub fn compute_residuals(prev: &AdmmState, next: &AdmmState, x_now: f64, cfg: &AdmmConfig) -> Residuals {
    let mut out = Residuals::default();
    residuals_into(&mut out, next, &prev.zeta, prev.tau, x_now, cfg);
    out
}

/// `lambda += r`, block by block.
pub fn update_duals(state: &mut AdmmState, r: &Residuals) {
    for (a, b) in state.nu.iter_mut().zip(&r.r_u) {
        *a += b;
    }
    for (a, b) in state.psi.iter_mut().zip(&r.r_x) {
        *a += b;
    }
    for (a, b) in state.phi.iter_mut().zip(&r.r_tau) {
        *a += b;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// Per scenario, per step battery power, W.
    pub u_opt: Vec<Vec<f64>>,
    /// Per scenario, per step predicted energy, J.
    pub x_opt: Vec<Vec<f64>>,
    pub tau_opt: f64,
    /// Scenario-averaged predicted fuel mass, kg.
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual_norm: f64,
    pub dual_residual_norm: f64,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
    pub solve_time_s: f64,
    /// Scalar subproblems finished by bisection.
    pub newton_fallbacks: usize,
    /// Final iterate, for warm starting the next update.
    pub state: AdmmState,
}

/// Solver bound to one problem instance.
#[derive(Clone, Debug)]
pub struct AdmmSolver {
    config: AdmmConfig,
    costs: Vec<StepCost>,
    n: usize,
    s: usize,
    x_now: f64,
    x_lo: f64,
    x_hi: f64,
    structured: StructuredSolver,
    zeta_prev: Vec<f64>,
    scratch: Vec<f64>,
    rev: Vec<f64>,
    residuals: Residuals,
    newton_fallbacks: usize,
}

impl AdmmSolver {
    /// Validates the configuration and problem and certifies feasibility.
    pub fn new(problem: &SmpcProblem, config: AdmmConfig) -> Result<Self> {
        config.validate()?;
        problem.validate()?;
        problem.certify()?;
        let (n, s) = (problem.horizon_len(), problem.scenario_count());
        let costs = problem.horizons.iter().flat_map(|h| h.steps.iter().map(StepCost::from)).collect();
        Ok(Self {
            structured: StructuredSolver::new(n, config.rho1, config.rho2),
            config,
            costs,
            n,
            s,
            x_now: problem.x_now,
            x_lo: problem.x_lo,
            x_hi: problem.x_hi,
            zeta_prev: vec![0.0; n * s],
            scratch: vec![0.0; n],
            rev: vec![0.0; n],
            residuals: Residuals::default(),
            newton_fallbacks: 0,
        })
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.config
    }

    pub fn costs(&self) -> &[StepCost] {
        &self.costs
    }

    fn check_state(&self, st: &AdmmState) {
        assert!(st.n == self.n && st.s == self.s, "state dimensions do not match the problem");
    }

    /// First half-step: scalar proximal problems for `u`, then the projected
    /// energy trajectory from the current consensus variable.
    pub fn update_u(&mut self, st: &mut AdmmState) {
        self.check_state(st);
        let c = &self.config;
        for j in 0..self.s {
            for k in 0..self.n {
                let i = j * self.n + k;
                let cost = &self.costs[i];
                if !cost.engine_on {
                    st.u[i] = cost.lo;
                    continue;
                }
                let a = st.zeta[i] - st.nu[i];
                let (w, target) = if k == 0 {
                    let b = st.tau + st.phi[j];
                    let w = c.rho1 + c.rho3;
                    (w, (c.rho1 * a + c.rho3 * b) / w)
                } else {
                    (c.rho1, a)
                };
                let sol = minimize_prox(cost, c.cost_scale, w, target, st.u[i], c.newton_tol, c.newton_max_iter);
                if sol.bisected {
                    self.newton_fallbacks += 1;
                }
                st.u[i] = sol.u;
            }
        }
        st.project_x(self.x_now, self.x_lo, self.x_hi);
    }

    /// Second half-step: `tau` and one structured solve per scenario for `zeta`.
    pub fn update_consensus(&mut self, st: &mut AdmmState) {
        self.check_state(st);
        let (n, s) = (self.n, self.s);
        let c = &self.config;
        st.tau = (0..s).map(|j| st.u[j * n] - st.phi[j]).sum::<f64>() / s as f64;
        for j in 0..s {
            let base = j * n;
            for k in 0..n {
                self.scratch[k] = st.x[base + k] - self.x_now + st.psi[base + k];
            }
            psi_t_mul(&self.scratch, &mut self.rev);
            let z = &mut st.zeta[base..base + n];
            for k in 0..n {
                z[k] = c.rho1 * (st.u[base + k] + st.nu[base + k]) - c.rho2 * self.rev[k];
            }
            self.structured.solve_in_place(z);
        }
    }

    /// One full iteration; returns the residual norms of the new iterate.
    pub fn iterate(&mut self, st: &mut AdmmState) -> (f64, f64) {
        self.zeta_prev.copy_from_slice(&st.zeta);
        let tau_prev = st.tau;
        self.update_u(st);
        self.update_consensus(st);
        residuals_into(&mut self.residuals, st, &self.zeta_prev, tau_prev, self.x_now, &self.config);
        update_duals(st, &self.residuals);
        (self.residuals.primal_norm, self.residuals.dual_norm)
    }

    /// Like [`AdmmState::cold_start`], but with every `u` at the minimiser of
    /// its own step's fuel over its box, which is already optimal wherever
    /// the energy bounds are inactive. The termination test only measures
    /// how far the iterates move, and with a small fuel gradient an
    /// unconstrained step barely moves from wherever it starts, so a start
    /// at the box midpoint can stop far from the optimum.
    pub fn decoupled_start(&self, problem: &SmpcProblem) -> AdmmState {
        let c = &self.config;
        let mut st = AdmmState::cold_start(problem);
        for (u, cost) in st.u.iter_mut().zip(&self.costs) {
            if cost.engine_on {
                *u = minimize_prox(cost, c.cost_scale, 0.0, 0.0, *u, c.newton_tol, c.newton_max_iter).u;
            }
        }
        st.zeta.clone_from(&st.u);
        st.project_x(problem.x_now, problem.x_lo, problem.x_hi);
        st.tau = (0..st.s).map(|j| st.u[j * st.n]).sum::<f64>() / st.s as f64;
        st
    }

    /// Start from a previous update's final iterate: multipliers are shifted
    /// one step forward (new tail entries zero) on top of
    /// [`Self::decoupled_start`]. The primal iterates are not carried over, because
    /// the predicted timing moves between updates and a shifted value can
    /// sit inside the new box yet far from the new optimum, where the
    /// movement-based termination test would accept it. `None` if the
    /// scenario count changed.
    pub fn warm_start(&self, problem: &SmpcProblem, prev: &AdmmState) -> Option<AdmmState> {
        if prev.s != self.s || prev.n == 0 {
            return None;
        }
        let mut st = self.decoupled_start(problem);
        let (n, old_n) = (self.n, prev.n);
        for j in 0..self.s {
            for k in 0..n.min(old_n - 1) {
                st.nu[j * n + k] = prev.nu[j * old_n + k + 1];
                st.psi[j * n + k] = prev.psi[j * old_n + k + 1];
            }
        }
        st.phi.clone_from(&prev.phi);
        st.project_x(problem.x_now, problem.x_lo, problem.x_hi);
        Some(st)
    }

    /// Scenario-averaged fuel mass of `u`.
    pub fn objective(&self, u: &[f64]) -> f64 {
        self.costs.iter().zip(u).map(|(c, &v)| c.fuel(v)).sum::<f64>() / self.s as f64
    }

    /// Iterate from `init` (or [`Self::decoupled_start`]) until both residual norms are at
    /// most `epsilon` or the iteration limit is reached.
    pub fn solve(&mut self, problem: &SmpcProblem, init: Option<AdmmState>) -> SolveResult {
        let start = Instant::now();
        let mut st = match init {
            Some(s) if s.n == self.n && s.s == self.s => s,
            _ => self.decoupled_start(problem),
        };
        self.newton_fallbacks = 0;
        let mut history = Vec::new();
        let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
        let mut converged = false;
        for it in 1..=self.config.max_iterations {
            (primal, dual) = self.iterate(&mut st);
            history.push(IterationRecord { iteration: it, primal, dual, tau: st.tau });
            if primal.max(dual) <= self.config.epsilon {
                converged = true;
                break;
            }
        }
        let n = self.n;
        SolveResult {
            u_opt: st.u.chunks(n).map(<[f64]>::to_vec).collect(),
            x_opt: st.x.chunks(n).map(<[f64]>::to_vec).collect(),
            tau_opt: st.tau,
            objective: self.objective(&st.u),
            iterations: history.len(),
            primal_residual_norm: primal,
            dual_residual_norm: dual,
            converged,
            history,
            solve_time_s: start.elapsed().as_secs_f64(),
            newton_fallbacks: self.newton_fallbacks,
            state: st,
        }
    }
}

/// Convenience wrapper: certify, then solve from `init` or a cold start.
pub fn solve(problem: &SmpcProblem, config: &AdmmConfig, init: Option<AdmmState>) -> Result<SolveResult> {
    let mut solver = AdmmSolver::new(problem, config.clone())?;
    Ok(solver.solve(problem, init))
}

/// Whether every step's `u` lies inside its box.
pub fn within_boxes(problem: &SmpcProblem, u: &[Vec<f64>]) -> bool {
    problem.horizons.iter().zip(u).all(|(h, us)| {
        h.steps.iter().zip(us).all(|(st, &v)| v >= st.u_lo - ENERGY_TOL && v <= st.u_hi + ENERGY_TOL)
    })
}
