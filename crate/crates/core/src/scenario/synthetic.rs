//! Seeded synthetic route database: a single hill (uphill first half,
//! downhill second half) driven by drivers with different cruising habits,
//! sharing a slow zone at the midpoint where some of them stop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{JourneyRecord, RouteDatabase};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRouteConfig {
    /// m
    pub route_length_m: usize,
    /// Peak road gradient, rad; the profile is `max sin(2 pi l / L)`.
    pub max_gradient_rad: f64,
    /// Mean cruising speed across drivers, m/s.
    pub cruise_speed_mps: f64,
    /// Standard deviation of the per-driver cruising speed factor.
    pub driver_spread: f64,
    /// Upper bound on the amplitude of each slow speed fluctuation, m/s.
    pub fluctuation_mps: f64,
    /// Speed range in the midpoint slow zone, m/s.
    pub slow_zone_speed_mps: [f64; 2],
    /// Half width of the slow zone, m.
    pub slow_zone_half_width_m: f64,
    /// Probability that a driver stops at the midpoint.
    pub stop_probability: f64,
    /// Stops last between one second and this long, s.
    pub max_dwell_s: f64,
    /// m/s^2
    pub max_accel: f64,
    /// m/s^2, positive
    pub max_decel: f64,
}

impl Default for SyntheticRouteConfig {
    fn default() -> Self {
        Self {
            route_length_m: 8000,
            max_gradient_rad: 0.0785,
            cruise_speed_mps: 17.0,
            driver_spread: 0.06,
            fluctuation_mps: 1.5,
            slow_zone_speed_mps: [4.0, 6.0],
            slow_zone_half_width_m: 40.0,
            stop_probability: 0.35,
            max_dwell_s: 8.0,
            max_accel: 2.0,
            max_decel: 2.5,
        }
    }
}

impl SyntheticRouteConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cruise_speed_mps", self.cruise_speed_mps),
            ("max_accel", self.max_accel),
            ("max_decel", self.max_decel),
            ("max_dwell_s", self.max_dwell_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("synthetic.{name} must be positive")));
            }
        }
        if self.route_length_m < 10 {
            return Err(Error::invalid("synthetic.route_length_m must be at least 10"));
        }
        if !(0.0..=1.0).contains(&self.stop_probability) {
            return Err(Error::invalid("synthetic.stop_probability must lie in [0, 1]"));
        }
        let [lo, hi] = self.slow_zone_speed_mps;
        if !(0.0 < lo && lo <= hi) || self.driver_spread < 0.0 || self.fluctuation_mps < 0.0 {
            return Err(Error::invalid("synthetic speed parameters are inconsistent"));
        }
        if !(self.max_gradient_rad.abs() < 0.5) || self.slow_zone_half_width_m < 0.0 {
            return Err(Error::invalid("synthetic route shape parameters are out of range"));
        }
        Ok(())
    }

    pub fn gradient_at(&self, l: f64) -> f64 {
        let length = self.route_length_m as f64;
        self.max_gradient_rad * (2.0 * std::f64::consts::PI * l / length).sin()
    }
}

/// Time to cross a 1 m cell whose speed varies linearly with position.
fn cell_time(v0: f64, v1: f64) -> f64 {
    if v0 == 0.0 || v1 == 0.0 {
        // constant acceleration from or to rest
        2.0 / (v0 + v1)
    } else if (v1 - v0).abs() <= 1e-12 * v0 {
        1.0 / v0
    } else {
        (v1 / v0).ln() / (v1 - v0)
    }
}

/// Journey `index` of the database seeded with `seed`. Every journey uses
/// its own random stream, so it does not depend on how many are generated.
pub fn synthetic_journey(cfg: &SyntheticRouteConfig, seed: u64, index: usize) -> Result<JourneyRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let length = cfg.route_length_m;

    let factor = Normal::new(1.0, cfg.driver_spread)
        .map_err(|e| Error::invalid(e.to_string()))?
        .sample(&mut rng)
        .clamp(0.8, 1.2);
    let cruise = cfg.cruise_speed_mps * factor;
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let amp = rng.random_range(0.0..=cfg.fluctuation_mps);
            let wavelength = rng.random_range(300.0..1500.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (amp, wavelength, phase)
        })
        .collect();
    let [slow_lo, slow_hi] = cfg.slow_zone_speed_mps;
    let slow = if slow_hi > slow_lo { rng.random_range(slow_lo..slow_hi) } else { slow_lo };
    let stops = rng.random_bool(cfg.stop_probability);
    let dwell = rng.random_range(1.0..=cfg.max_dwell_s.max(1.0));

    let mid = length / 2;
    let mut velocity: Vec<f64> = (0..=length)
        .map(|i| {
            let l = i as f64;
            let wobble: f64 = waves.iter().map(|(a, w, p)| a * (std::f64::consts::TAU * l / w + p).sin()).sum();
            let mut v = (cruise + wobble).max(1.0);
            if (l - mid as f64).abs() <= cfg.slow_zone_half_width_m {
                v = v.min(slow);
            }
            v
        })
        .collect();
    velocity[0] = 0.0;
    velocity[length] = 0.0;
    if stops {
        velocity[mid] = 0.0;
    }
    for i in 0..length {
        let cap = (velocity[i] * velocity[i] + 2.0 * cfg.max_accel).sqrt();
        velocity[i + 1] = velocity[i + 1].min(cap);
    }
    for i in (0..length).rev() {
        let cap = (velocity[i + 1] * velocity[i + 1] + 2.0 * cfg.max_decel).sqrt();
        velocity[i] = velocity[i].min(cap);
    }

    let mut time = Vec::with_capacity(length + 1);
    time.push(0.0);
    for i in 0..length {
        let mut dt = cell_time(velocity[i], velocity[i + 1]);
        if stops && i + 1 == mid {
            dt += dwell;
        }
        time.push(time[i] + dt);
    }

    let rec = JourneyRecord {
        id: format!("journey_{index:03}"),
        position: (0..=length).map(|i| i as f64).collect(),
        velocity,
        gradient: (0..=length).map(|i| cfg.gradient_at(i as f64)).collect(),
        time,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn generate_synthetic_db(cfg: &SyntheticRouteConfig, journeys: usize, seed: u64) -> Result<RouteDatabase> {
    if journeys == 0 {
        return Err(Error::invalid("at least one journey must be generated"));
    }
    let recs = (0..journeys).map(|j| synthetic_journey(cfg, seed, j)).collect::<Result<Vec<_>>>()?;
    RouteDatabase::new(recs)
}
