//! Static model of a parallel, pre-transmission plug-in hybrid powertrain.
//!
//! All powers are in watts, energies in joules, speeds in rad/s and fuel in kg.
//! The engine and motor loss maps are quadratic in power with speed-dependent
//! coefficients; the battery is an open-circuit voltage behind an internal
//! resistance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed on domain checks before an input is rejected.
const DOMAIN_TOL: f64 = 1e-9;

fn domain_slack(x: f64) -> f64 {
    DOMAIN_TOL * x.abs().max(1.0)
}

/// `c2 * x^2 + c1 * x + c0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Quadratic {
    pub const fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c0, c1, c2 }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.c2 * x + self.c1) * x + self.c0
    }

    #[inline]
    pub fn slope(&self, x: f64) -> f64 {
        2.0 * self.c2 * x + self.c1
    }

    /// Left end of the interval on which the polynomial is increasing.
    #[inline]
    pub fn vertex(&self) -> f64 {
        -self.c1 / (2.0 * self.c2)
    }

    /// Discriminant of `eval(x) = y` on the increasing branch.
    #[inline]
    pub fn inverse_discriminant(&self, y: f64) -> f64 {
        self.c1 * self.c1 + 4.0 * self.c2 * (y - self.c0)
    }

    /// Inverse on the increasing branch. The discriminant is clamped at zero,
    /// which maps values below the minimum onto the vertex.
    #[inline]
    pub fn inverse_unchecked(&self, y: f64) -> f64 {
        let root = self.inverse_discriminant(y).max(0.0).sqrt();
        if self.c1 > 0.0 {
            // avoids cancellation between -c1 and the root
            2.0 * (y - self.c0) / (self.c1 + root)
        } else {
            (root - self.c1) / (2.0 * self.c2)
        }
    }

    fn is_strictly_convex(&self) -> bool {
        self.c2 > 0.0 && self.c2.is_finite() && self.c1.is_finite() && self.c0.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg/m^3
    pub air_density: f64,
    pub drag_coeff: f64,
    /// m^2
    pub frontal_area: f64,
    pub rolling_resist: f64,
    /// m/s^2
    pub gravity: f64,
    /// m
    pub wheel_radius: f64,
    /// Overall ratios (gearbox times final drive), ascending.
    pub gear_ratios: Vec<f64>,
    /// rad/s
    pub engine_min_speed: f64,
    /// W
    pub engine_power_max: f64,
    /// W, symmetric for motoring and regeneration.
    pub motor_power_max: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("mass", self.mass),
            ("air_density", self.air_density),
            ("drag_coeff", self.drag_coeff),
            ("frontal_area", self.frontal_area),
            ("rolling_resist", self.rolling_resist),
            ("gravity", self.gravity),
            ("wheel_radius", self.wheel_radius),
            ("engine_min_speed", self.engine_min_speed),
            ("engine_power_max", self.engine_power_max),
            ("motor_power_max", self.motor_power_max),
        ];
        for (name, value) in scalars {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("vehicle.{name} must be positive, got {value}")));
            }
        }
        if self.gear_ratios.is_empty() {
            return Err(Error::invalid("vehicle.gear_ratios is empty"));
        }
        if self.gear_ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("vehicle.gear_ratios must be positive"));
        }
        if self.gear_ratios.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("vehicle.gear_ratios must be strictly ascending"));
        }
        Ok(())
    }

    pub fn has_gear(&self, ratio: f64) -> bool {
        self.gear_ratios.contains(&ratio)
    }
}

/// Piecewise-linear table of quadratic coefficients against shaft speed,
/// clamped at the table ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub speed_grid: Vec<f64>,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl CoefficientTable {
    fn validate(&self, name: &str) -> Result<()> {
        let n = self.speed_grid.len();
        if n == 0 {
            return Err(Error::invalid(format!("{name}: empty speed grid")));
        }
        if self.c0.len() != n || self.c1.len() != n || self.c2.len() != n {
            return Err(Error::invalid(format!(
                "{name}: coefficient arrays must match the speed grid length {n}"
            )));
        }
        if self.speed_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("{name}: speed grid must be strictly increasing")));
        }
        for j in 0..n {
            if !Quadratic::new(self.c0[j], self.c1[j], self.c2[j]).is_strictly_convex() {
                return Err(Error::invalid(format!(
                    "{name}: quadratic coefficient at grid point {j} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn at(&self, omega: f64) -> Quadratic {
        let grid = &self.speed_grid;
        let last = grid.len() - 1;
        if omega <= grid[0] {
            return Quadratic::new(self.c0[0], self.c1[0], self.c2[0]);
        }
        if omega >= grid[last] {
            return Quadratic::new(self.c0[last], self.c1[last], self.c2[last]);
        }
        let hi = grid.partition_point(|g| *g <= omega);
        let lo = hi - 1;
        let w = (omega - grid[lo]) / (grid[hi] - grid[lo]);
        let lerp = |v: &[f64]| v[lo] + w * (v[hi] - v[lo]);
        Quadratic::new(lerp(&self.c0), lerp(&self.c1), lerp(&self.c2))
    }
}

/// Fuel rate map: kg/s as a quadratic in engine power (alpha0 kg/s, alpha1 kg/J,
/// alpha2 kg/(s W^2)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EngineMapSpec", into = "EngineMapSpec")]
pub struct EngineMap(CoefficientTable);

/// Electrical power map: W as a quadratic in mechanical motor power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MotorMapSpec", into = "MotorMapSpec")]
pub struct MotorMap(CoefficientTable);

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineMapSpec {
    speed_grid: Vec<f64>,
    alpha0: Vec<f64>,
    alpha1: Vec<f64>,
    alpha2: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotorMapSpec {
    speed_grid: Vec<f64>,
    beta0: Vec<f64>,
    beta1: Vec<f64>,
    beta2: Vec<f64>,
}

impl TryFrom<EngineMapSpec> for EngineMap {
    type Error = Error;
    fn try_from(s: EngineMapSpec) -> Result<Self> {
        EngineMap::new(s.speed_grid, s.alpha0, s.alpha1, s.alpha2)
    }
}

impl From<EngineMap> for EngineMapSpec {
    fn from(m: EngineMap) -> Self {
        let t = m.0;
        EngineMapSpec { speed_grid: t.speed_grid, alpha0: t.c0, alpha1: t.c1, alpha2: t.c2 }
    }
}

impl TryFrom<MotorMapSpec> for MotorMap {
    type Error = Error;
    fn try_from(s: MotorMapSpec) -> Result<Self> {
        MotorMap::new(s.speed_grid, s.beta0, s.beta1, s.beta2)
    }
}

impl From<MotorMap> for MotorMapSpec {
    fn from(m: MotorMap) -> Self {
        let t = m.0;
        MotorMapSpec { speed_grid: t.speed_grid, beta0: t.c0, beta1: t.c1, beta2: t.c2 }
    }
}

impl EngineMap {
    pub fn new(speed_grid: Vec<f64>, alpha0: Vec<f64>, alpha1: Vec<f64>, alpha2: Vec<f64>) -> Result<Self> {
        let table = CoefficientTable { speed_grid, c0: alpha0, c1: alpha1, c2: alpha2 };
        table.validate("engine map")?;
        Ok(Self(table))
    }

    /// Coefficients `(alpha0, alpha1, alpha2)` at engine speed `omega`.
    pub fn coefficients(&self, omega: f64) -> Quadratic {
        self.0.at(omega)
    }

    pub fn table(&self) -> &CoefficientTable {
        &self.0
    }
}

impl MotorMap {
    pub fn new(speed_grid: Vec<f64>, beta0: Vec<f64>, beta1: Vec<f64>, beta2: Vec<f64>) -> Result<Self> {
        let table = CoefficientTable { speed_grid, c0: beta0, c1: beta1, c2: beta2 };
        table.validate("motor map")?;
        Ok(Self(table))
    }

    /// Coefficients `(beta0, beta1, beta2)` at motor speed `omega`.
    pub fn coefficients(&self, omega: f64) -> Quadratic {
        self.0.at(omega)
    }

    pub fn table(&self) -> &CoefficientTable {
        &self.0
    }
}

/// Battery equivalent circuit and energy window, in joules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BatterySpec", into = "BatterySpec")]
pub struct BatteryParams {
    pub open_circuit_voltage: f64,
    pub internal_resistance: f64,
    pub capacity: f64,
    pub soc_min: f64,
    pub soc_max: f64,
}

/// File representation: capacity in amp-hours and SOC limits in percent.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatterySpec {
    open_circuit_voltage: f64,
    internal_resistance: f64,
    capacity_ah: f64,
    soc_min_percent: f64,
    soc_max_percent: f64,
}

impl TryFrom<BatterySpec> for BatteryParams {
    type Error = Error;
    fn try_from(s: BatterySpec) -> Result<Self> {
        let capacity = s.capacity_ah * 3600.0 * s.open_circuit_voltage;
        let b = BatteryParams {
            open_circuit_voltage: s.open_circuit_voltage,
            internal_resistance: s.internal_resistance,
            capacity,
            soc_min: capacity * s.soc_min_percent / 100.0,
            soc_max: capacity * s.soc_max_percent / 100.0,
        };
        b.validate()?;
        Ok(b)
    }
}

impl From<BatteryParams> for BatterySpec {
    fn from(b: BatteryParams) -> Self {
        BatterySpec {
            open_circuit_voltage: b.open_circuit_voltage,
            internal_resistance: b.internal_resistance,
            capacity_ah: b.capacity / (3600.0 * b.open_circuit_voltage),
            soc_min_percent: 100.0 * b.soc_min / b.capacity,
            soc_max_percent: 100.0 * b.soc_max / b.capacity,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        let v = self.open_circuit_voltage;
        let r = self.internal_resistance;
        if !(v > 0.0 && v.is_finite() && r > 0.0 && r.is_finite()) {
            return Err(Error::invalid("battery voltage and resistance must be positive"));
        }
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= self.capacity) {
            return Err(Error::invalid(format!(
                "battery window must satisfy 0 <= min < max <= capacity, got [{}, {}] of {}",
                self.soc_min, self.soc_max, self.capacity
            )));
        }
        Ok(())
    }

    /// Largest terminal power the circuit can deliver, `V^2 / (4R)`.
    pub fn max_terminal_power(&self) -> f64 {
        let v = self.open_circuit_voltage;
        v * v / (4.0 * self.internal_resistance)
    }

    /// Fraction of capacity in percent.
    pub fn percent(&self, energy: f64) -> f64 {
        100.0 * energy / self.capacity
    }
}

/// Everything needed to evaluate the powertrain model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Powertrain {
    pub vehicle: VehicleParams,
    pub engine: EngineMap,
    pub motor: MotorMap,
    pub battery: BatteryParams,
}

impl Powertrain {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.battery.validate()
    }
}

/// Wheel speed for vehicle speed `v`.
pub fn wheel_speed(v: f64, params: &VehicleParams) -> f64 {
    v / params.wheel_radius
}

/// Power demanded at the wheels by the longitudinal vehicle model.
pub fn traction_power(v: f64, v_dot: f64, theta: f64, params: &VehicleParams) -> f64 {
    let p = params;
    let force = p.mass * v_dot
        + 0.5 * p.air_density * v * v * p.drag_coeff * p.frontal_area
        + p.rolling_resist * p.mass * p.gravity * theta.cos()
        + p.mass * p.gravity * theta.sin();
    force * v
}

/// `(engine speed, motor speed)` for clutch state `engine_on` and overall ratio.
pub fn component_speeds(
    engine_on: bool,
    ratio: f64,
    omega_wheel: f64,
    params: &VehicleParams,
) -> Result<(f64, f64)> {
    if !params.has_gear(ratio) {
        return Err(Error::UnknownGear(ratio));
    }
    let omega = ratio * omega_wheel;
    Ok(if engine_on { (omega, omega) } else { (0.0, omega) })
}

/// Power delivered to the axles after mechanical braking.
pub fn axle_power(p_drv: f64, p_brk: f64) -> Result<f64> {
    if p_brk > 0.0 {
        return Err(Error::Domain { what: "braking power", value: p_brk, lo: f64::NEG_INFINITY, hi: 0.0 });
    }
    Ok(p_drv - p_brk)
}

fn check_increasing(what: &'static str, x: f64, q: &Quadratic) -> Result<()> {
    let floor = q.vertex();
    if x < floor - domain_slack(floor) {
        return Err(Error::Domain { what, value: x, lo: floor, hi: f64::INFINITY });
    }
    Ok(())
}

/// Fuel rate in kg/s for engine power `p_eng`.
pub fn fuel_rate(p_eng: f64, alpha: &Quadratic) -> Result<f64> {
    check_increasing("engine power", p_eng, alpha)?;
    Ok(alpha.eval(p_eng))
}

/// Electrical power drawn by the motor for mechanical output `p_em`.
pub fn motor_electrical(p_em: f64, beta: &Quadratic) -> Result<f64> {
    check_increasing("motor power", p_em, beta)?;
    Ok(beta.eval(p_em))
}

/// Rate of depletion of the battery's internal energy for terminal power `p_c`:
/// `V^2/(2R) (1 - sqrt(1 - 4 R P_c / V^2))`.
pub fn battery_internal(p_c: f64, batt: &BatteryParams) -> Result<f64> {
    let limit = batt.max_terminal_power();
    if p_c > limit + domain_slack(limit) {
        return Err(Error::Domain { what: "terminal power", value: p_c, lo: f64::NEG_INFINITY, hi: limit });
    }
    Ok(battery_internal_unchecked(p_c, batt.open_circuit_voltage, batt.internal_resistance))
}

#[inline]
pub(crate) fn battery_internal_unchecked(p_c: f64, v: f64, r: f64) -> f64 {
    let root = (1.0 - 4.0 * r * p_c / (v * v)).max(0.0).sqrt();
    // 2 P_c / (1 + root) is the closed form with the cancellation removed
    2.0 * p_c / (1.0 + root)
}

/// Terminal power for internal power `u` (inverse of [`battery_internal`]).
#[inline]
pub(crate) fn terminal_from_internal(u: f64, v: f64, r: f64) -> f64 {
    u - r * u * u / (v * v)
}

/// Motor mechanical power that produces internal battery power `u`.
pub fn battery_inverse(u: f64, beta: &Quadratic, batt: &BatteryParams) -> Result<f64> {
    battery_inverse_vr(u, beta, batt.open_circuit_voltage, batt.internal_resistance)
}

pub(crate) fn battery_inverse_vr(u: f64, beta: &Quadratic, v: f64, r: f64) -> Result<f64> {
    let u_max = v * v / (2.0 * r);
    if u > u_max + domain_slack(u_max) {
        return Err(Error::Domain { what: "internal battery power", value: u, lo: f64::NEG_INFINITY, hi: u_max });
    }
    let p_c = terminal_from_internal(u, v, r);
    let disc = beta.inverse_discriminant(p_c);
    let scale = beta.c1 * beta.c1;
    if disc < -DOMAIN_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain {
            what: "internal battery power (negative radicand)",
            value: u,
            lo: battery_internal_unchecked(beta.eval(beta.vertex()), v, r),
            hi: u_max,
        });
    }
    Ok(beta.inverse_unchecked(p_c))
}

/// Fuel rate as a function of internal battery power at one horizon step.
pub fn fuel_of_u(u: f64, step: &crate::horizon::HorizonStep) -> Result<f64> {
    if !step.engine_on {
        return Err(Error::invalid("fuel_of_u is only defined on engine-on steps"));
    }
    let span = step.u_hi - step.u_lo;
    let slack = domain_slack(step.u_hi.abs().max(step.u_lo.abs())).max(DOMAIN_TOL * span);
    if u < step.u_lo - slack || u > step.u_hi + slack {
        return Err(Error::Domain { what: "internal battery power", value: u, lo: step.u_lo, hi: step.u_hi });
    }
    let p_em = battery_inverse_vr(u, &step.beta, step.voltage, step.resistance)?;
    fuel_rate(step.p - p_em, &step.alpha)
}
