//! Turns one predicted driver behaviour into the per-step parameters of the
//! convex power-split problem: heuristic gear, clutch and brake decisions,
//! axle power, shaft speeds, loss-map coefficients and battery power bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::powertrain::{self, Powertrain, Quadratic, VehicleParams};

/// Upper end of the speed range over which default gear thresholds are spread.
const DEFAULT_GEAR_SPAN: f64 = 35.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DriverScenario {
    /// m/s
    pub v: Vec<f64>,
    /// rad
    pub theta: Vec<f64>,
    /// m/s^2
    pub v_dot: Vec<f64>,
}

impl DriverScenario {
    pub fn new(v: Vec<f64>, theta: Vec<f64>, v_dot: Vec<f64>) -> Result<Self> {
        let s = Self { v, theta, v_dot };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != self.v.len() || self.v_dot.len() != self.v.len() {
            return Err(Error::invalid(format!(
                "scenario sequences differ in length: v {}, theta {}, v_dot {}",
                self.v.len(),
                self.theta.len(),
                self.v_dot.len()
            )));
        }
        if let Some(k) = self.v.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("scenario speed at step {k} is {}", self.v[k])));
        }
        if self.theta.iter().chain(&self.v_dot).any(|x| !x.is_finite()) {
            return Err(Error::invalid("scenario contains non-finite gradient or acceleration"));
        }
        Ok(())
    }
}

/// Heuristic external control: speed-thresholded gears, engine on above its
/// minimum speed, and a fixed fraction of braking power sent to the friction
/// brakes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicPolicy {
    /// Ascending vehicle speeds (m/s) at which the next higher gear engages.
    pub gear_speed_thresholds: Vec<f64>,
    pub brake_fraction: f64,
    /// rad/s
    pub engine_min_speed: f64,
}

impl HeuristicPolicy {
    /// Thresholds spread uniformly over `[0, 35]` m/s.
    pub fn default_for(vehicle: &VehicleParams, brake_fraction: f64) -> Self {
        let gears = vehicle.gear_ratios.len();
        let step = DEFAULT_GEAR_SPAN / gears as f64;
        Self {
            gear_speed_thresholds: (1..gears).map(|i| step * i as f64).collect(),
            brake_fraction,
            engine_min_speed: vehicle.engine_min_speed,
        }
    }

    pub fn validate(&self, vehicle: &VehicleParams) -> Result<()> {
        if !(0.0..=1.0).contains(&self.brake_fraction) {
            return Err(Error::invalid(format!("brake_fraction {} not in [0, 1]", self.brake_fraction)));
        }
        if self.gear_speed_thresholds.len() + 1 != vehicle.gear_ratios.len() {
            return Err(Error::invalid(format!(
                "{} gear thresholds given for {} gears",
                self.gear_speed_thresholds.len(),
                vehicle.gear_ratios.len()
            )));
        }
        if self.gear_speed_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("gear thresholds must be strictly ascending"));
        }
        if !(self.engine_min_speed > 0.0) {
            return Err(Error::invalid("engine_min_speed must be positive"));
        }
        Ok(())
    }

    /// Overall ratio for vehicle speed `v`: first gear is the largest ratio.
    pub fn gear_for(&self, v: f64, vehicle: &VehicleParams) -> f64 {
        let upshifts = self.gear_speed_thresholds.partition_point(|t| *t <= v);
        let ratios = &vehicle.gear_ratios;
        ratios[ratios.len() - 1 - upshifts]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeuristicDecision {
    pub engine_on: bool,
    pub ratio: f64,
    /// Power demanded at the wheels.
    pub p_drv: f64,
    /// Friction braking power, non-positive.
    pub p_brk: f64,
}

/// Clutch, gear and friction-brake decisions for every step of a scenario.
///
/// Friction braking takes `brake_fraction` of any negative demand, plus
/// whatever exceeds the motor's regeneration limit. The engine is also forced
/// on when the demand exceeds what the motor alone can deliver.
pub fn apply_heuristics(
    scn: &DriverScenario,
    pol: &HeuristicPolicy,
    params: &VehicleParams,
) -> Vec<HeuristicDecision> {
    (0..scn.len())
        .map(|k| {
            let v = scn.v[k];
            let ratio = pol.gear_for(v, params);
            let omega = ratio * powertrain::wheel_speed(v, params);
            let p_drv = powertrain::traction_power(v, scn.v_dot[k], scn.theta[k], params);
            let p_brk = if p_drv < 0.0 {
                (pol.brake_fraction * p_drv).min(p_drv + params.motor_power_max).min(0.0)
            } else {
                0.0
            };
            let engine_on = omega >= pol.engine_min_speed || p_drv - p_brk > params.motor_power_max;
            HeuristicDecision { engine_on, ratio, p_drv, p_brk }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLimits {
    pub engine_max: f64,
    pub motor_max: f64,
}

impl From<&VehicleParams> for PowerLimits {
    fn from(p: &VehicleParams) -> Self {
        Self { engine_max: p.engine_power_max, motor_max: p.motor_power_max }
    }
}

/// Battery internal power bounds `(u_lo, u_hi)` for one step.
///
/// The motor power interval is the intersection of what the engine leaves
/// over, the motor rating, the increasing domain of the motor map and the
/// square-root domain of the battery circuit; it is then mapped through the
/// motor and battery models. With the engine off the interval is the single
/// point that supplies the whole axle power electrically.
pub fn compute_u_bounds(
    engine_on: bool,
    p: f64,
    alpha: &Quadratic,
    beta: &Quadratic,
    voltage: f64,
    resistance: f64,
    limits: &PowerLimits,
) -> Result<(f64, f64)> {
    let infeasible = |reason: String| Error::InfeasibleStep { step: 0, reason };
    let em_sqrt_max = beta.inverse_unchecked(voltage * voltage / (4.0 * resistance));
    let em_floor = beta.vertex();
    let to_u = |p_em: f64| powertrain::battery_internal_unchecked(beta.eval(p_em), voltage, resistance);

    if !engine_on {
        let tol = 1e-9 * p.abs().max(1.0);
        if p > limits.motor_max + tol || p < -limits.motor_max - tol {
            return Err(infeasible(format!(
                "engine off but axle power {p:.1} W exceeds the motor rating {:.1} W",
                limits.motor_max
            )));
        }
        if p < em_floor || p > em_sqrt_max {
            return Err(infeasible(format!("engine off but axle power {p:.1} W is outside the motor/battery domain")));
        }
        let u = to_u(p);
        return Ok((u, u));
    }

    let eng_lo = alpha.vertex().max(0.0);
    let eng_hi = limits.engine_max;
    if eng_lo > eng_hi {
        return Err(infeasible(format!("engine increasing domain starts above its rating ({eng_lo:.1} W)")));
    }
    let em_lo = (p - eng_hi).max(-limits.motor_max).max(em_floor);
    let em_hi = (p - eng_lo).min(limits.motor_max).min(em_sqrt_max);
    let tol = 1e-9 * em_lo.abs().max(em_hi.abs()).max(1.0);
    if em_lo > em_hi + tol {
        return Err(infeasible(format!(
            "axle power {p:.1} W leaves an empty motor power interval [{em_lo:.1}, {em_hi:.1}] W"
        )));
    }
    let em_hi = em_hi.max(em_lo);
    Ok((to_u(em_lo), to_u(em_hi)))
}

/// Convex-problem parameters of one prediction step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonStep {
    /// Axle power, W.
    pub p: f64,
    pub omega_eng: f64,
    pub omega_em: f64,
    pub alpha: Quadratic,
    pub beta: Quadratic,
    pub voltage: f64,
    pub resistance: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub engine_on: bool,
    pub ratio: f64,
    pub p_drv: f64,
    pub p_brk: f64,
}

impl HorizonStep {
    /// Motor mechanical power for internal battery power `u`.
    pub fn motor_power(&self, u: f64) -> f64 {
        let p_c = powertrain::terminal_from_internal(u, self.voltage, self.resistance);
        self.beta.inverse_unchecked(p_c)
    }

    /// Engine power for internal battery power `u` (zero when the engine is off).
    pub fn engine_power(&self, u: f64) -> f64 {
        if self.engine_on {
            self.p - self.motor_power(u)
        } else {
            0.0
        }
    }

    pub fn fuel_of_u(&self, u: f64) -> Result<f64> {
        powertrain::fuel_of_u(u, self)
    }

    /// Zero-demand, engine-off step used to pad short predictions.
    pub fn is_degenerate(&self) -> bool {
        self.u_lo == self.u_hi
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHorizon {
    pub steps: Vec<HorizonStep>,
    /// Indices of engine-on steps.
    pub engine_on_set: Vec<usize>,
}

impl ScenarioHorizon {
    pub fn from_steps(steps: Vec<HorizonStep>) -> Self {
        let engine_on_set = steps.iter().enumerate().filter(|(_, s)| s.engine_on).map(|(k, _)| k).collect();
        Self { steps, engine_on_set }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn u_lo(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.u_lo).collect()
    }

    pub fn u_hi(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.u_hi).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.steps.iter().enumerate() {
            if !(s.u_lo <= s.u_hi) {
                return Err(Error::InfeasibleStep { step: k, reason: format!("u_lo {} > u_hi {}", s.u_lo, s.u_hi) });
            }
            if !s.engine_on && s.u_lo != s.u_hi {
                return Err(Error::InfeasibleStep { step: k, reason: "engine-off step with a non-degenerate interval".into() });
            }
            if !(s.alpha.c2 > 0.0 && s.beta.c2 > 0.0) {
                return Err(Error::invalid(format!("step {k}: loss maps must be strictly convex")));
            }
        }
        let expected: Vec<usize> = self.steps.iter().enumerate().filter(|(_, s)| s.engine_on).map(|(k, _)| k).collect();
        if expected != self.engine_on_set {
            return Err(Error::invalid("engine-on set does not match the steps"));
        }
        Ok(())
    }
}

/// Build the horizon parameters for one scenario. `x_now` is the current
/// battery energy; the circuit voltage and resistance are frozen at the
/// values for that state for the whole horizon.
pub fn assemble_horizon(
    scn: &DriverScenario,
    pol: &HeuristicPolicy,
    pt: &Powertrain,
    x_now: f64,
) -> Result<ScenarioHorizon> {
    scn.validate()?;
    if !(0.0..=pt.battery.capacity).contains(&x_now) {
        return Err(Error::Domain { what: "battery energy", value: x_now, lo: 0.0, hi: pt.battery.capacity });
    }
    let decisions = apply_heuristics(scn, pol, &pt.vehicle);
    let steps = decisions
        .iter()
        .enumerate()
        .map(|(k, d)| {
            assemble_step(scn.v[k], d, pt).map_err(|e| match e {
                Error::InfeasibleStep { reason, .. } => Error::InfeasibleStep { step: k, reason },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioHorizon::from_steps(steps))
}

/// Parameters of a single step at speed `v` under the external decisions `d`.
pub fn assemble_step(v: f64, d: &HeuristicDecision, pt: &Powertrain) -> Result<HorizonStep> {
    let vehicle = &pt.vehicle;
    let limits = PowerLimits::from(vehicle);
    let voltage = pt.battery.open_circuit_voltage;
    let resistance = pt.battery.internal_resistance;
    let p = powertrain::axle_power(d.p_drv, d.p_brk)?;
    let omega_w = powertrain::wheel_speed(v, vehicle);
    let (omega_eng, omega_em) = powertrain::component_speeds(d.engine_on, d.ratio, omega_w, vehicle)?;
    let alpha = pt.engine.coefficients(omega_eng);
    let beta = pt.motor.coefficients(omega_em);
    let (u_lo, u_hi) = compute_u_bounds(d.engine_on, p, &alpha, &beta, voltage, resistance, &limits)?;
    Ok(HorizonStep {
        p,
        omega_eng,
        omega_em,
        alpha,
        beta,
        voltage,
        resistance,
        u_lo,
        u_hi,
        engine_on: d.engine_on,
        ratio: d.ratio,
        p_drv: d.p_drv,
        p_brk: d.p_brk,
    })
}
