//! Feasibility certificates for the nominal and scenario problems, the
//! one-step-ahead feasibility test, and the scenario-count bounds.
//!
//! The battery energy after `k + 1` steps is `x(t) - Σ_{i≤k} u_i`, so the set
//! of reachable energies is an interval that is shifted by `-[u_lo, u_hi]`
//! and intersected with the energy window at every step. The problem is
//! feasible exactly when none of these intervals becomes empty.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Absolute tolerance, in joules, on every energy comparison.
pub const ENERGY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Reachable energy intervals `(min, max)`: entry 0 is the current energy,
    /// entry `k + 1` the set after step `k`. Propagation stops at the first
    /// empty interval, which is the last entry of an infeasible report.
    pub intervals: Vec<(f64, f64)>,
    /// Index into `intervals` of the first empty set.
    pub first_failure: Option<usize>,
}

fn propagate(x0: f64, u_lo: &[f64], u_hi: &[f64], x_lo: f64, x_hi: f64) -> FeasibilityReport {
    let mut intervals = Vec::with_capacity(u_lo.len() + 1);
    intervals.push((x0, x0));
    let (mut lo, mut hi) = (x0, x0);
    for (k, (a, b)) in u_lo.iter().zip(u_hi).enumerate() {
        let next_hi = x_hi.min(hi - a);
        let next_lo = x_lo.max(lo - b);
        if next_lo > next_hi + ENERGY_TOL {
            intervals.push((next_lo, next_hi));
            return FeasibilityReport { feasible: false, intervals, first_failure: Some(k + 1) };
        }
        // an interval that is empty only within tolerance is treated as a point
        (lo, hi) = if next_lo > next_hi { (next_hi, next_hi) } else { (next_lo, next_hi) };
        intervals.push((lo, hi));
    }
    FeasibilityReport { feasible: true, intervals, first_failure: None }
}

/// Certificate for the single-scenario problem.
pub fn certify_mpc(x0: f64, u_lo: &[f64], u_hi: &[f64], x_lo: f64, x_hi: f64) -> Result<FeasibilityReport> {
    check_bounds(u_lo, u_hi, x_lo, x_hi)?;
    Ok(propagate(x0, u_lo, u_hi, x_lo, x_hi))
}

/// Energies after step 0 from which steps `1..` can be completed inside the
/// window, by backward propagation: `B_N = window`,
/// `B_k = window ∩ (B_{k+1} + [u_lo_k, u_hi_k])`. `None` if empty.
fn completable_from_step_one(u_lo: &[f64], u_hi: &[f64], x_lo: f64, x_hi: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (x_lo, x_hi);
    for k in (1..u_lo.len()).rev() {
        lo = x_lo.max(lo + u_lo[k]);
        hi = x_hi.min(hi + u_hi[k]);
        if lo > hi + ENERGY_TOL {
            return None;
        }
        hi = hi.max(lo);
    }
    Some((lo, hi))
}

/// Per-scenario certificates for the scenario problem, in which every
/// scenario's first input is the common first-stage input. Step 0 of every
/// report uses the first inputs that are admissible in all scenarios and
/// leave each of them completable; if there are none, scenarios that are
/// feasible on their own fail at the first step.
pub fn certify_smpc<B: AsRef<[f64]>>(
    x0: f64,
    bounds: &[(B, B)],
    x_lo: f64,
    x_hi: f64,
) -> Result<Vec<FeasibilityReport>> {
    if bounds.is_empty() {
        return Err(Error::NoScenarios("scenario certificate needs at least one scenario".into()));
    }
    for (lo, hi) in bounds {
        check_bounds(lo.as_ref(), hi.as_ref(), x_lo, x_hi)?;
    }
    if bounds[0].0.as_ref().is_empty() {
        return Ok(bounds.iter().map(|_| propagate(x0, &[], &[], x_lo, x_hi)).collect());
    }
    let common_lo = bounds.iter().map(|(lo, _)| lo.as_ref()[0]).fold(f64::NEG_INFINITY, f64::max);
    let common_hi = bounds.iter().map(|(_, hi)| hi.as_ref()[0]).fold(f64::INFINITY, f64::min);
    if common_lo > common_hi + ENERGY_TOL {
        let failed = FeasibilityReport { feasible: false, intervals: vec![(x0, x0)], first_failure: Some(0) };
        return Ok(vec![failed; bounds.len()]);
    }
    let common_hi = common_hi.max(common_lo);
    // energies after step 0 that every scenario can reach and complete
    let (mut x1_lo, mut x1_hi) = (x_lo.max(x0 - common_hi), x_hi.min(x0 - common_lo));
    for (lo, hi) in bounds {
        match completable_from_step_one(lo.as_ref(), hi.as_ref(), x_lo, x_hi) {
            Some((a, b)) => {
                x1_lo = x1_lo.max(a);
                x1_hi = x1_hi.min(b);
            }
            None => {
                x1_lo = f64::INFINITY;
                break;
            }
        }
    }
    let joint = x1_lo <= x1_hi + ENERGY_TOL;
    let (tau_lo, tau_hi) = if joint { (x0 - x1_hi.max(x1_lo), x0 - x1_lo) } else { (common_lo, common_hi) };
    Ok(bounds
        .iter()
        .map(|(lo, hi)| {
            let (mut lo, mut hi) = (lo.as_ref().to_vec(), hi.as_ref().to_vec());
            lo[0] = tau_lo;
            hi[0] = tau_hi;
            let report = propagate(x0, &lo, &hi, x_lo, x_hi);
            if report.feasible && !joint {
                let intervals = vec![(x0, x0), (x1_lo, x1_hi)];
                return FeasibilityReport { feasible: false, intervals, first_failure: Some(1) };
            }
            report
        })
        .collect())
}

fn check_bounds(u_lo: &[f64], u_hi: &[f64], x_lo: f64, x_hi: f64) -> Result<()> {
    if u_lo.len() != u_hi.len() {
        return Err(Error::invalid(format!("bound sequences differ in length ({} vs {})", u_lo.len(), u_hi.len())));
    }
    if let Some(k) = u_lo.iter().zip(u_hi).position(|(a, b)| !(a <= b)) {
        return Err(Error::invalid(format!("u_lo > u_hi at step {k}")));
    }
    if !(x_lo <= x_hi) {
        return Err(Error::invalid("energy window is empty"));
    }
    Ok(())
}

/// Whether applying `tau` now leaves the next problem feasible, given the
/// next step's battery power interval.
pub fn one_step_feasible(x_now: f64, tau: f64, u_lo_next: f64, u_hi_next: f64, x_lo: f64, x_hi: f64) -> bool {
    let x_next = x_now - tau;
    x_next - u_hi_next <= x_hi + ENERGY_TOL && x_next - u_lo_next >= x_lo - ENERGY_TOL
}

/// A `(scenario, step)` pair at which the cumulative-bound scenario
/// conditions fail, with the side that fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConditionFailure {
    pub scenario: usize,
    pub step: usize,
    /// True for forced over-discharge, false for forced over-charge.
    pub discharge: bool,
}

/// Checks the open-loop conditions on steps `k ≥ 1` that scenario
/// construction is expected to satisfy: pushing every future input to its
/// lower (upper) bound must not leave the energy window from above (below).
/// Failures are reported, not repaired.
pub fn check_scenario_conditions<B: AsRef<[f64]>>(
    x0: f64,
    bounds: &[(B, B)],
    x_lo: f64,
    x_hi: f64,
) -> Vec<ScenarioConditionFailure> {
    let mut failures = Vec::new();
    for (s, (lo, hi)) in bounds.iter().enumerate() {
        let (lo, hi) = (lo.as_ref(), hi.as_ref());
        let (Some(&lo0), Some(&hi0)) = (lo.first(), hi.first()) else { continue };
        let (mut sum_lo, mut sum_hi) = (lo0, hi0);
        for k in 1..lo.len() {
            sum_lo += lo[k];
            sum_hi += hi[k];
            if x0 - sum_hi > x_hi + ENERGY_TOL {
                failures.push(ScenarioConditionFailure { scenario: s, step: k, discharge: false });
            }
            if x0 - sum_lo < x_lo - ENERGY_TOL {
                failures.push(ScenarioConditionFailure { scenario: s, step: k, discharge: true });
            }
        }
    }
    failures
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain { what: name, value: p, lo: 0.0, hi: 1.0 })
    }
}

/// Upper bound `(1 - eps)^S` on the confidence that the violation probability
/// of the one-step-ahead condition exceeds `eps`.
pub fn violation_confidence_bound(eps: f64, scenarios: usize) -> Result<f64> {
    check_probability("epsilon", eps)?;
    if scenarios == 0 {
        return Err(Error::invalid("scenario count must be at least 1"));
    }
    Ok((1.0 - eps).powi(scenarios as i32))
}

/// The same bound when `discarded` of the `scenarios` samples were removed
/// after the fact: the probability that a binomial(`scenarios`, `eps`) count
/// does not exceed `discarded`, i.e. the regularized incomplete beta function
/// `I_{1-eps}(S - R, R + 1)`.
pub fn violation_bound_with_discards(eps: f64, scenarios: usize, discarded: usize) -> Result<f64> {
    check_probability("epsilon", eps)?;
    if discarded >= scenarios {
        return Err(Error::invalid(format!("cannot discard {discarded} of {scenarios} scenarios")));
    }
    if discarded == 0 {
        return violation_confidence_bound(eps, scenarios);
    }
    Ok(beta_reg((scenarios - discarded) as f64, (discarded + 1) as f64, 1.0 - eps))
}

/// Smallest `S` with `(1 - eps)^S ≤ 1 - beta`.
pub fn min_scenarios(eps: f64, beta: f64) -> Result<usize> {
    check_probability("epsilon", eps)?;
    check_probability("beta", beta)?;
    let target = 1.0 - beta;
    let ratio = (1.0 - beta).ln() / (1.0 - eps).ln();
    let mut s = (ratio.ceil() as usize).max(1);
    // the logarithm ratio can land a hair off an integer; settle on the exact
    // smallest count for the power form
    while s > 1 && (1.0 - eps).powi(s as i32 - 1) <= target {
        s -= 1;
    }
    while (1.0 - eps).powi(s as i32) > target {
        s += 1;
    }
    Ok(s)
}

/// Smallest `S` whose bound with `discarded` removed samples is at most
/// `1 - beta`. With nothing discarded this is [`min_scenarios`].
pub fn min_scenarios_with_discards(eps: f64, beta: f64, discarded: usize) -> Result<usize> {
    let lo = min_scenarios(eps, beta)?.max(discarded + 1);
    let target = 1.0 - beta;
    let ok = |s: usize| violation_bound_with_discards(eps, s, discarded).map(|b| b <= target);
    if ok(lo)? {
        return Ok(lo);
    }
    // the bound decreases in S: bracket by doubling, then bisect
    let (mut bad, mut good) = (lo, 2 * lo);
    while !ok(good)? {
        bad = good;
        good = good.checked_mul(2).ok_or_else(|| Error::invalid("scenario count overflows"))?;
    }
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if ok(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCountBound {
    pub epsilon: f64,
    pub beta: f64,
    pub s_min: usize,
}

impl ScenarioCountBound {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self> {
        Ok(Self { epsilon, beta, s_min: min_scenarios(epsilon, beta)? })
    }
}
