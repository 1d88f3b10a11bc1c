//! Shared fixtures for the integration tests: random problem instances and
//! independent dense reference solvers.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smpc_core::horizon::assemble_horizon;
use smpc_core::solver::StepCost;
use smpc_core::{DriverScenario, ExperimentConfig, ScenarioHorizon, SmpcProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random driver behaviour of length `n` whose first sample is `first`.
fn random_behaviour(rng: &mut ChaCha8Rng, n: usize, first: (f64, f64, f64)) -> DriverScenario {
    let mut v = vec![first.0];
    let mut theta = vec![first.1];
    let mut v_dot = vec![first.2];
    for _ in 1..n {
        let prev = *v.last().unwrap();
        let next: f64 = if rng.random_bool(0.05) { 0.0 } else { (prev + rng.random_range(-2.5..2.0)).clamp(0.0, 30.0) };
        v.push(next);
        theta.push(rng.random_range(-0.06..0.06));
        v_dot.push(0.0);
    }
    for k in 1..n {
        v_dot[k] = if k + 1 < n { v[k + 1] - v[k] } else { 0.0 };
    }
    DriverScenario::new(v, theta, v_dot).unwrap()
}

/// A random feasible problem with `s` scenarios of length `n` sharing their
/// first step. The energy window is placed close around the trajectory of a
/// strictly interior reference input, so the bounds are typically active at
/// the optimum; the reference input is returned as a strictly feasible point.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, s: usize) -> (SmpcProblem, Vec<Vec<f64>>) {
    let cfg = ExperimentConfig::default();
    let pt = &cfg.powertrain;
    let policy = cfg.policy();
    let x_now = cfg.initial_energy();
    'retry: loop {
        let first = (rng.random_range(3.0..25.0), rng.random_range(-0.04..0.04), rng.random_range(-1.0..1.0));
        let mut horizons: Vec<ScenarioHorizon> = Vec::with_capacity(s);
        for _ in 0..s {
            match assemble_horizon(&random_behaviour(rng, n, first), &policy, pt, x_now) {
                Ok(h) => horizons.push(h),
                Err(_) => continue 'retry,
            }
        }
        // reference input: a random interior point of each box, equal across
        // scenarios at the first step
        let lam0: f64 = rng.random_range(0.2..0.8);
        let reference: Vec<Vec<f64>> = horizons
            .iter()
            .map(|h| {
                h.steps
                    .iter()
                    .enumerate()
                    .map(|(k, st)| {
                        let lam = if k == 0 { lam0 } else { rng.random_range(0.2..0.8) };
                        st.u_lo + lam * (st.u_hi - st.u_lo)
                    })
                    .collect()
            })
            .collect();
        let (mut lo, mut hi) = (x_now, x_now);
        for us in &reference {
            let mut x = x_now;
            for &u in us {
                x -= u;
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        let margin_lo = rng.random_range(1e3..5e4);
        let margin_hi = rng.random_range(1e3..5e4);
        let p = SmpcProblem::new(horizons, x_now, lo - margin_lo, hi + margin_hi).unwrap();
        return (p, reference);
    }
}

/// Solution of the reference solver.
pub struct OracleSolution {
    pub objective: f64,
    pub tau: f64,
    pub u: Vec<Vec<f64>>,
}

/// Log-barrier interior-point method on the dense problem in the reduced
/// variables `(tau, u_{k,s} for k >= 1 on engine-on steps)`, started from a
/// strictly feasible `reference`. Minimises the scenario-averaged fuel scaled
/// by `scale`; returns the fuel in kg.
pub fn dense_oracle(problem: &SmpcProblem, reference: &[Vec<f64>], scale: f64) -> OracleSolution {
    let n = problem.horizon_len();
    let s = problem.scenario_count();
    let costs: Vec<Vec<StepCost>> = problem.horizons.iter().map(|h| h.steps.iter().map(StepCost::from).collect()).collect();
    // index of each (scenario, step) in the reduced vector, None if fixed
    let tau_free = costs[0][0].engine_on && costs[0][0].lo < costs[0][0].hi;
    let mut index = vec![vec![None; n]; s];
    let mut dim = 0;
    if tau_free {
        dim = 1;
        for row in index.iter_mut() {
            row[0] = Some(0);
        }
    }
    for (j, row) in index.iter_mut().enumerate() {
        for (k, slot) in row.iter_mut().enumerate().skip(1) {
            let c = &costs[j][k];
            if c.engine_on && c.lo < c.hi {
                *slot = Some(dim);
                dim += 1;
            }
        }
    }
    let fixed = |j: usize, k: usize| if costs[j][k].engine_on { reference[j][k] } else { costs[j][k].lo };
    let expand = |z: &DVector<f64>| -> Vec<Vec<f64>> {
        (0..s).map(|j| (0..n).map(|k| index[j][k].map_or_else(|| fixed(j, k), |i| z[i])).collect()).collect()
    };
    let objective = |u: &[Vec<f64>]| -> f64 {
        costs.iter().zip(u).map(|(cs, us)| cs.iter().zip(us).map(|(c, &v)| c.fuel(v)).sum::<f64>()).sum::<f64>() / s as f64
    };
    // barrier value, gradient and Hessian at z; None outside the domain
    let barrier = |z: &DVector<f64>, t: f64, want_derivs: bool| -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let u = expand(z);
        let mut val = 0.0;
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        for j in 0..s {
            let mut x = problem.x_now;
            let mut active: Vec<usize> = Vec::new();
            for k in 0..n {
                let c = &costs[j][k];
                let v = u[j][k];
                if let Some(i) = index[j][k] {
                    let (a, b) = (v - c.lo, c.hi - v);
                    if a <= 0.0 || b <= 0.0 {
                        return None;
                    }
                    // the shared first input is counted once
                    if k > 0 || j == 0 {
                        val -= a.ln() + b.ln();
                        if want_derivs {
                            g[i] += -1.0 / a + 1.0 / b;
                            h[(i, i)] += 1.0 / (a * a) + 1.0 / (b * b);
                        }
                    }
                    if !active.contains(&i) {
                        active.push(i);
                    }
                    let d = c.derivatives(v);
                    val += t * scale * d.value / s as f64;
                    if want_derivs {
                        g[i] += t * scale * d.first / s as f64;
                        h[(i, i)] += t * scale * d.second / s as f64;
                    }
                } else if c.engine_on {
                    val += t * scale * c.fuel(v) / s as f64;
                }
                x -= v;
                // x depends on every free variable in `active` with slope -1
                let (a, b) = (x - problem.x_lo, problem.x_hi - x);
                if a <= 0.0 || b <= 0.0 {
                    return None;
                }
                val -= a.ln() + b.ln();
                if want_derivs {
                    let gx = 1.0 / a - 1.0 / b;
                    let hx = 1.0 / (a * a) + 1.0 / (b * b);
                    for &p in &active {
                        g[p] += gx;
                        for &q in &active {
                            h[(p, q)] += hx;
                        }
                    }
                }
            }
        }
        Some((val, g, h))
    };

    let mut z = DVector::zeros(dim);
    for j in 0..s {
        for k in 0..n {
            if let Some(i) = index[j][k] {
                z[i] = reference[j][k];
            }
        }
    }
    let constraints = (2 * n * s + 2 * dim) as f64;
    let mut t = 1.0;
    if dim > 0 {
        loop {
            for _ in 0..200 {
                let (val, g, h) = barrier(&z, t, true).expect("iterate stays interior");
                let step = match h.clone().cholesky() {
                    Some(ch) => ch.solve(&(-&g)),
                    None => -&g,
                };
                let decrement = -g.dot(&step);
                if decrement < 1e-12 {
                    break;
                }
                let mut a = 1.0;
                loop {
                    let trial = &z + a * &step;
                    if let Some((tv, _, _)) = barrier(&trial, t, false) {
                        if tv <= val - 0.25 * a * decrement {
                            z = trial;
                            break;
                        }
                    }
                    a *= 0.5;
                    if a < 1e-14 {
                        break;
                    }
                }
                if a < 1e-14 {
                    break;
                }
            }
            let scaled = scale * objective(&expand(&z));
            if constraints / t <= 1e-10 * scaled.abs().max(1e-12) {
                break;
            }
            t *= 10.0;
        }
    }
    let u = expand(&z);
    OracleSolution { objective: objective(&u), tau: u[0][0], u }
}

/// Feasibility of the energy constraints as a system of difference
/// constraints, decided by Bellman-Ford negative-cycle detection. Energies
/// after the first step are shared by all scenarios (common first input).
/// Node 0 is the reference zero, node 1 the current energy.
pub fn lp_feasible(x0: f64, bounds: &[(Vec<f64>, Vec<f64>)], x_lo: f64, x_hi: f64) -> bool {
    let n = bounds[0].0.len();
    // node of the energy after step k (k >= 0) of scenario j
    let node = |j: usize, k: usize| if k == 0 { 2 } else { 3 + j * (n - 1) + (k - 1) };
    let nodes = 3 + bounds.len() * (n - 1);
    // edge (a, b, w) encodes value[b] - value[a] <= w
    let mut edges: Vec<(usize, usize, f64)> = vec![(0, 1, x0), (1, 0, -x0)];
    for (j, (lo, hi)) in bounds.iter().enumerate() {
        for k in 0..n {
            let from = if k == 0 { 1 } else { node(j, k - 1) };
            let to = node(j, k);
            // u_k = value[from] - value[to] in [lo_k, hi_k]
            edges.push((from, to, -lo[k]));
            edges.push((to, from, hi[k]));
            edges.push((0, to, x_hi));
            edges.push((to, 0, -x_lo));
        }
    }
    let mut dist = vec![0.0; nodes];
    for _ in 0..nodes {
        let mut changed = false;
        for &(a, b, w) in &edges {
            if dist[a] + w < dist[b] {
                dist[b] = dist[a] + w;
                changed = true;
            }
        }
        if !changed {
            return true;
        }
    }
    false
}

/// `(rho1 I + rho2 PsiᵀPsi)` as a dense matrix.
pub fn dense_system(n: usize, rho1: f64, rho2: f64) -> DMatrix<f64> {
    let psi = DMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 });
    DMatrix::identity(n, n) * rho1 + psi.transpose() * psi * rho2
}

pub fn dense_psi(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 })
}

/// Integer-valued bounds, so boundary cases are exact in floating point.
pub fn random_bounds(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-14..=10) as f64).collect();
    let hi = lo.iter().map(|&l| l + rng.random_range(0..=12) as f64).collect();
    (lo, hi)
}

/// Scenario bounds that usually share their first step and otherwise
/// only overlap there.
pub fn random_smpc_bounds(rng: &mut ChaCha8Rng, n: usize, s: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut bounds: Vec<_> = (0..s).map(|_| random_bounds(rng, n)).collect();
    let (lo0, hi0) = (bounds[0].0[0], bounds[0].1[0]);
    for b in bounds.iter_mut().skip(1) {
        if rng.random_bool(0.8) {
            (b.0[0], b.1[0]) = (lo0, hi0);
        }
    }
    bounds
}
