//! Per-step fuel cost as a function of internal battery power, and the
//! safeguarded Newton method for its one-dimensional proximal subproblem.

use serde::{Deserialize, Serialize};

use crate::horizon::HorizonStep;
use crate::powertrain::{terminal_from_internal, Quadratic};

/// The composed cost `F(u) = f(p - g⁻¹(u))` of one step, with its box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub p: f64,
    pub alpha: Quadratic,
    pub beta: Quadratic,
    pub voltage: f64,
    pub resistance: f64,
    pub lo: f64,
    pub hi: f64,
    pub engine_on: bool,
}

/// Value and first two derivatives of a scalar function at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

impl From<&HorizonStep> for StepCost {
    fn from(s: &HorizonStep) -> Self {
        Self {
            p: s.p,
            alpha: s.alpha,
            beta: s.beta,
            voltage: s.voltage,
            resistance: s.resistance,
            lo: s.u_lo,
            hi: s.u_hi,
            engine_on: s.engine_on,
        }
    }
}

impl StepCost {
    /// Motor mechanical power delivering internal battery power `u`.
    #[inline]
    pub fn motor_power(&self, u: f64) -> f64 {
        self.beta.inverse_unchecked(terminal_from_internal(u, self.voltage, self.resistance))
    }

    /// Fuel rate in kg/s; zero on engine-off steps.
    #[inline]
    pub fn fuel(&self, u: f64) -> f64 {
        if self.engine_on {
            self.alpha.eval(self.p - self.motor_power(u))
        } else {
            0.0
        }
    }

    /// `F(u)`, `F'(u)` and `F''(u)` on an engine-on step.
    ///
    /// With `P(u)` the motor power, `h'(P) P' = 1 - 2Ru/V²` gives `P'`, and
    /// differentiating once more gives `P''`; the chain rule through
    /// `f(p - P)` then yields the derivatives of the cost.
    #[inline]
    pub fn derivatives(&self, u: f64) -> Derivatives {
        let inv_v2 = 1.0 / (self.voltage * self.voltage);
        let r = self.resistance;
        let p_c = u - r * u * u * inv_v2;
        let q = 1.0 - 2.0 * r * u * inv_v2;
        let b = &self.beta;
        let disc = b.inverse_discriminant(p_c).max(0.0);
        let root = disc.sqrt();
        let p_em = if b.c1 > 0.0 { 2.0 * (p_c - b.c0) / (b.c1 + root) } else { (root - b.c1) / (2.0 * b.c2) };
        // h'(P) equals the square root of the discriminant on the increasing branch
        let h1 = root.max(f64::MIN_POSITIVE);
        let d1 = q / h1;
        let d2 = (-2.0 * r * inv_v2 - 2.0 * b.c2 * d1 * d1) / h1;
        let a = &self.alpha;
        let e = self.p - p_em;
        let f1 = 2.0 * a.c2 * e + a.c1;
        Derivatives { value: a.eval(e), first: -f1 * d1, second: 2.0 * a.c2 * d1 * d1 - f1 * d2 }
    }
}

/// Outcome of one scalar subproblem solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarSolution {
    pub u: f64,
    pub iterations: usize,
    /// True when Newton did not settle and bisection finished the job.
    pub bisected: bool,
}

/// Minimise `kappa F(u) + (w/2)(u - c)²` over `[cost.lo, cost.hi]`.
///
/// Newton iterations on the derivative start from `start` and are kept inside
/// a bracket that shrinks with every derivative sign; a step leaving the
/// bracket is replaced by bisection. After `max_iter` Newton steps the bracket
/// is bisected down to `tol`.
pub fn minimize_prox(cost: &StepCost, kappa: f64, w: f64, c: f64, start: f64, tol: f64, max_iter: usize) -> ScalarSolution {
    let (lo, hi) = (cost.lo, cost.hi);
    if lo >= hi {
        return ScalarSolution { u: lo, iterations: 0, bisected: false };
    }
    let grad = |u: f64| {
        let d = cost.derivatives(u);
        (kappa * d.first + w * (u - c), kappa * d.second + w)
    };
    let (mut a, mut b) = (lo, hi);
    let (mut lo_checked, mut hi_checked) = (false, false);
    let mut u = start.clamp(lo, hi);
    for it in 1..=max_iter {
        let (g, h) = grad(u);
        if g == 0.0 {
            return ScalarSolution { u, iterations: it, bisected: false };
        }
        if g < 0.0 {
            a = u;
        } else {
            b = u;
        }
        if u == lo {
            lo_checked = true;
            if g > 0.0 {
                return ScalarSolution { u: lo, iterations: it, bisected: false };
            }
        }
        if u == hi {
            hi_checked = true;
            if g < 0.0 {
                return ScalarSolution { u: hi, iterations: it, bisected: false };
            }
        }
        let mut next = u - g / h;
        // converged: checked before the bracket test, since at the solution
        // `u` is itself a bracket end and the last tiny step may not move it
        if (next - u).abs() <= tol {
            return ScalarSolution { u: next.clamp(lo, hi), iterations: it, bisected: false };
        }
        if next <= a || next >= b {
            if next <= lo && !lo_checked {
                next = lo;
            } else if next >= hi && !hi_checked {
                next = hi;
            } else {
                next = 0.5 * (a + b);
            }
        }
        if (next - u).abs() <= tol {
            return ScalarSolution { u: next, iterations: it, bisected: false };
        }
        u = next;
    }
    let mut iterations = max_iter;
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if grad(mid).0 < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        iterations += 1;
    }
    ScalarSolution { u: 0.5 * (a + b), iterations, bisected: true }
}
