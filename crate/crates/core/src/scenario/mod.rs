//! Driver-behaviour scenarios from a database of previous journeys along the
//! same route.
//!
//! Journeys are stored per metre of route position. To predict from the
//! vehicle's current position, each journey is resampled in time at 1 Hz from
//! that position to the end of the route, blended with the live measurement
//! so the first element is exact, and zero-padded to a common horizon.

mod io;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::horizon::DriverScenario;

pub use io::{ingest_route_db, read_journey_csv, write_journey_csv, write_route_db, DatabaseManifest, MANIFEST_FILE};
pub use synthetic::{generate_synthetic_db, synthetic_journey, SyntheticRouteConfig};

/// One recorded journey, indexed by route position at 1 m resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JourneyRecord {
    pub id: String,
    /// m, `0, 1, 2, …`
    pub position: Vec<f64>,
    /// m/s
    pub velocity: Vec<f64>,
    /// rad
    pub gradient: Vec<f64>,
    /// Elapsed time at each grid point, s.
    pub time: Vec<f64>,
}

impl JourneyRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.position.len();
        let fail = |reason: String| Error::invalid(format!("journey {}: {reason}", self.id));
        if n < 2 {
            return Err(fail("needs at least two grid points".into()));
        }
        if self.velocity.len() != n || self.gradient.len() != n || self.time.len() != n {
            return Err(fail("column lengths differ".into()));
        }
        if let Some(i) = self.position.iter().enumerate().position(|(i, &l)| l != i as f64) {
            return Err(fail(format!("position grid must be 0, 1, 2, … m; row {i} has {}", self.position[i])));
        }
        if let Some(i) = self.velocity.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(fail(format!("negative or non-finite speed {} at row {i}", self.velocity[i])));
        }
        if self.gradient.iter().any(|g| !g.is_finite()) {
            return Err(fail("non-finite gradient".into()));
        }
        if let Some(i) = self.time.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(fail(format!("time must strictly increase; rows {i} and {}", i + 1)));
        }
        if let Some(i) = self.velocity.windows(2).position(|w| w[0] == 0.0 && w[1] == 0.0) {
            return Err(fail(format!("zero speed at both ends of cell {i}")));
        }
        Ok(())
    }

    pub fn route_length(&self) -> f64 {
        (self.position.len() - 1) as f64
    }

    pub fn duration(&self) -> f64 {
        self.time[self.time.len() - 1] - self.time[0]
    }

    /// Time spent moving across cell `i`; the rest of the cell's recorded
    /// time is a stop at whichever end has zero speed.
    fn moving_time(&self, i: usize) -> f64 {
        let (v0, v1) = (self.velocity[i], self.velocity[i + 1]);
        let total = self.time[i + 1] - self.time[i];
        if v0 == 0.0 || v1 == 0.0 {
            (2.0 / (v0 + v1)).min(total)
        } else {
            total
        }
    }

    /// Time at which the journey passes position `l`.
    fn time_at(&self, l: f64) -> f64 {
        let last = self.position.len() - 1;
        if l >= last as f64 {
            return self.time[last];
        }
        let i = l.floor() as usize;
        let frac = l - i as f64;
        let total = self.time[i + 1] - self.time[i];
        let moving = self.moving_time(i);
        let dwell_first = self.velocity[i] == 0.0;
        if frac == 0.0 {
            self.time[i]
        } else if dwell_first {
            self.time[i] + (total - moving) + frac * moving
        } else {
            self.time[i] + frac * moving
        }
    }

    /// Position and whether the vehicle is stationary at time `t`
    /// (within the record's time span). `cell` is a search hint that only
    /// moves forward.
    fn position_at(&self, t: f64, cell: &mut usize) -> (f64, bool) {
        let last = self.position.len() - 1;
        while *cell + 1 < last && self.time[*cell + 1] <= t {
            *cell += 1;
        }
        let i = *cell;
        let total = self.time[i + 1] - self.time[i];
        let moving = self.moving_time(i);
        let dwell = total - moving;
        let mut dt = (t - self.time[i]).clamp(0.0, total);
        if self.velocity[i] == 0.0 {
            if dt < dwell {
                return (i as f64, true);
            }
            dt -= dwell;
        } else if self.velocity[i + 1] == 0.0 && dt >= moving {
            return ((i + 1) as f64, true);
        }
        (i as f64 + (dt / moving).min(1.0), false)
    }

    fn interpolate(column: &[f64], l: f64) -> f64 {
        let last = column.len() - 1;
        let i = (l.floor() as usize).min(last - 1);
        let frac = l - i as f64;
        column[i] + frac * (column[i + 1] - column[i])
    }
}

/// All journeys of one route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteDatabase {
    pub journeys: Vec<JourneyRecord>,
    pub route_length: f64,
}

impl RouteDatabase {
    pub fn new(journeys: Vec<JourneyRecord>) -> Result<Self> {
        let Some(first) = journeys.first() else {
            return Err(Error::NoScenarios("route database has no journeys".into()));
        };
        let route_length = first.route_length();
        for j in &journeys {
            j.validate()?;
            if j.route_length() != route_length {
                return Err(Error::invalid(format!(
                    "journey {} covers {} m but the route is {} m long",
                    j.id,
                    j.route_length(),
                    route_length
                )));
            }
        }
        let mut ids: Vec<&str> = journeys.iter().map(|j| j.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("journey ids must be unique"));
        }
        Ok(Self { journeys, route_length })
    }

    pub fn journey(&self, id: &str) -> Option<&JourneyRecord> {
        self.journeys.iter().find(|j| j.id == id)
    }
}

/// Route position after driving `v_history` at 1 Hz.
pub fn position_now(v_history: &[f64]) -> f64 {
    // an empty f64 sum is -0.0
    v_history.iter().sum::<f64>() + 0.0
}

/// A journey resampled in time at 1 Hz.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Resampled {
    pub position: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Resampled {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Forward difference of the speed, with zero at the final sample.
    pub fn acceleration(&self) -> Vec<f64> {
        let mut a: Vec<f64> = self.v.windows(2).map(|w| w[1] - w[0]).collect();
        if !self.v.is_empty() {
            a.push(0.0);
        }
        a
    }
}

/// Samples of `journey` at 1 s intervals from the moment it passes `from_l`
/// until it reaches the end of the route.
///
/// Between grid points the journey moves at constant speed through each
/// cell, taking the recorded cell time; a cell touching a stop spends its
/// moving time at the constant-acceleration value `2 / (v0 + v1)` and the
/// remainder stationary at the stop, where the samples report zero speed.
pub fn resample_to_time(journey: &JourneyRecord, from_l: f64) -> Result<Resampled> {
    let length = journey.route_length();
    if !(0.0..=length).contains(&from_l) {
        return Err(Error::Domain { what: "resampling start position", value: from_l, lo: 0.0, hi: length });
    }
    let t_start = journey.time_at(from_l);
    let t_end = journey.time[journey.time.len() - 1];
    let count = if t_end > t_start { (t_end - t_start).ceil() as usize } else { 0 };
    let mut out = Resampled {
        position: Vec::with_capacity(count),
        v: Vec::with_capacity(count),
        theta: Vec::with_capacity(count),
    };
    let mut cell = (from_l.floor() as usize).min(journey.position.len() - 2);
    // step back to a cell that starts no later than t_start
    while cell > 0 && journey.time[cell] > t_start {
        cell -= 1;
    }
    for k in 0..count {
        let t = t_start + k as f64;
        if t >= t_end {
            break;
        }
        let (l, stopped) = journey.position_at(t, &mut cell);
        out.position.push(l);
        out.v.push(if stopped { 0.0 } else { JourneyRecord::interpolate(&journey.velocity, l) });
        out.theta.push(JourneyRecord::interpolate(&journey.gradient, l));
    }
    Ok(out)
}

/// The live measurement at the current update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveState {
    pub v: f64,
    pub theta: f64,
    pub v_dot: f64,
}

/// Blend the live measurement into a resampled journey with weight
/// `exp(-decay k)` at step `k`. Accelerations blend the live acceleration with
/// the forward difference of the resampled speed.
pub fn blend(live: &LiveState, resampled: &Resampled, decay: f64) -> Result<DriverScenario> {
    if resampled.is_empty() {
        return Err(Error::invalid("cannot blend an empty prediction"));
    }
    let dv = resampled.acceleration();
    let n = resampled.len();
    let (mut v, mut theta, mut v_dot) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        // at k = 0 the weight is exactly one, so the first element is the measurement
        let w = (-decay * k as f64).exp();
        v.push(live.v * w + resampled.v[k] * (1.0 - w));
        theta.push(live.theta * w + resampled.theta[k] * (1.0 - w));
        v_dot.push(live.v_dot * w + dv[k] * (1.0 - w));
    }
    DriverScenario::new(v, theta, v_dot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedScenarioSet {
    pub scenarios: Vec<DriverScenario>,
    /// Journey id behind each scenario.
    pub sources: Vec<String>,
}

impl GeneratedScenarioSet {
    pub fn horizon_len(&self) -> usize {
        self.scenarios.first().map_or(0, DriverScenario::len)
    }
}

/// Append zeros so every scenario has length `n` (or truncate to it).
pub fn pad_to(scn: &mut DriverScenario, n: usize) {
    scn.v.resize(n, 0.0);
    scn.theta.resize(n, 0.0);
    scn.v_dot.resize(n, 0.0);
}

/// Scenarios from every journey except `exclude`, predicted from route
/// position `from_l`.
pub fn generate(
    db: &RouteDatabase,
    exclude: Option<&str>,
    live: &LiveState,
    from_l: f64,
    cfg: &ScenarioConfig,
) -> Result<GeneratedScenarioSet> {
    let from_l = from_l.clamp(0.0, db.route_length);
    let candidates = db.journeys.iter().filter(|j| Some(j.id.as_str()) != exclude);
    let candidates: Vec<&JourneyRecord> = match cfg.max_scenarios {
        Some(m) => candidates.take(m).collect(),
        None => candidates.collect(),
    };
    if candidates.is_empty() {
        return Err(Error::NoScenarios(format!(
            "no journeys left to predict from after excluding {}",
            exclude.unwrap_or("nothing")
        )));
    }
    let mut scenarios = Vec::with_capacity(candidates.len());
    let mut sources = Vec::with_capacity(candidates.len());
    for j in candidates {
        let mut r = resample_to_time(j, from_l)?;
        if r.is_empty() {
            // this journey has already finished here: predict a stop
            r = Resampled { position: vec![from_l], v: vec![0.0], theta: vec![live.theta] };
        }
        scenarios.push(blend(live, &r, cfg.blend_decay)?);
        sources.push(j.id.clone());
    }
    let longest = scenarios.iter().map(DriverScenario::len).max().unwrap_or(0);
    let n = cfg.horizon_cap.map_or(longest, |cap| longest.min(cap));
    for s in &mut scenarios {
        pad_to(s, n);
    }
    Ok(GeneratedScenarioSet { scenarios, sources })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn constant_journey(id: &str, v: f64, length: usize) -> JourneyRecord {
        JourneyRecord {
            id: id.into(),
            position: (0..=length).map(|i| i as f64).collect(),
            velocity: vec![v; length + 1],
            gradient: vec![0.01; length + 1],
            time: (0..=length).map(|i| i as f64 / v).collect(),
        }
    }

    fn cfg() -> ScenarioConfig {
        ScenarioConfig { blend_decay: 0.25, horizon_cap: None, max_scenarios: None }
    }

    #[test]
    fn position_examples() {
        assert_eq!(position_now(&[]), 0.0);
        assert_eq!(position_now(&[10.0; 5]), 50.0);
        assert_eq!(position_now(&[1.0, 2.5, 0.0, 4.0]), 7.5);
    }

    #[test]
    fn constant_speed_resampling() {
        let j = constant_journey("a", 10.0, 100);
        let r = resample_to_time(&j, 0.0).unwrap();
        assert_eq!(r.len(), 10);
        assert!(r.v.iter().all(|&v| (v - 10.0).abs() < 1e-12));
        for (k, l) in r.position.iter().enumerate() {
            assert_relative_eq!(*l, 10.0 * k as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn resampling_at_route_end_is_empty() {
        let j = constant_journey("a", 10.0, 100);
        assert!(resample_to_time(&j, 100.0).unwrap().is_empty());
        assert!(resample_to_time(&j, 100.5).is_err());
        assert!(resample_to_time(&j, -1.0).is_err());
    }

    #[test]
    fn resampling_mid_route() {
        let j = constant_journey("a", 4.0, 100);
        let r = resample_to_time(&j, 37.5).unwrap();
        // 62.5 m left at 4 m/s is 15.625 s
        assert_eq!(r.len(), 16);
        assert_relative_eq!(r.position[0], 37.5, epsilon = 1e-9);
        assert_relative_eq!(r.position[15], 97.5, epsilon = 1e-9);
    }

    #[test]
    fn dwell_emits_zero_speed_samples() {
        // accelerate from rest, cruise, stop at 6 m and dwell there 10 s, then go on
        let velocity = vec![0.0, 2.0, 2.0, 2.0, 2.0, 2.0, 0.0, 2.0, 2.0, 2.0, 2.0];
        let mut time = vec![0.0];
        for i in 0..10 {
            let (a, b): (f64, f64) = (velocity[i], velocity[i + 1]);
            let mut dt = if a == 0.0 || b == 0.0 { 2.0 / (a + b) } else { 1.0 / a };
            if i == 5 {
                dt += 10.0;
            }
            time.push(time[i] + dt);
        }
        let j = JourneyRecord {
            id: "stop".into(),
            position: (0..=10).map(|i| i as f64).collect(),
            velocity,
            gradient: vec![0.0; 11],
            time,
        };
        j.validate().unwrap();
        let r = resample_to_time(&j, 0.0).unwrap();
        let zeros = r.v.iter().filter(|&&v| v == 0.0).count();
        // the start sample plus ten seconds of dwell
        assert!((10..=12).contains(&zeros), "{zeros} stationary samples in {:?}", r.v);
        assert_eq!(r.len() as f64, j.duration().ceil());
        assert!(r.position.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn blend_examples() {
        let r = Resampled { position: vec![0.0; 5], v: vec![20.0; 5], theta: vec![0.0; 5] };
        let live = LiveState { v: 10.0, theta: 0.02, v_dot: 0.5 };
        let s = blend(&live, &r, 0.25).unwrap();
        assert_eq!(s.v[0], 10.0);
        assert_eq!(s.theta[0], 0.02);
        assert_eq!(s.v_dot[0], 0.5);
        let w = (-1.0f64).exp();
        assert_relative_eq!(s.v[4], 10.0 * w + 20.0 * (1.0 - w), max_relative = 1e-15);
        assert_relative_eq!(s.v[4], 16.321205588285576, max_relative = 1e-12);

        let same = blend(&LiveState { v: 20.0, theta: 0.0, v_dot: 0.0 }, &r, 0.25).unwrap();
        assert!(same.v.iter().all(|&v| (v - 20.0).abs() < 1e-12));
        assert!(blend(&live, &Resampled::default(), 0.25).is_err());
    }

    #[test]
    fn generate_excludes_and_pads() {
        let db = RouteDatabase::new(vec![
            constant_journey("a", 10.0, 100),
            constant_journey("b", 5.0, 100),
            constant_journey("c", 20.0, 100),
        ])
        .unwrap();
        let live = LiveState { v: 7.0, theta: 0.01, v_dot: 0.0 };
        let set = generate(&db, Some("a"), &live, 0.0, &cfg()).unwrap();
        assert_eq!(set.sources, vec!["b", "c"]);
        assert_eq!(set.horizon_len(), 20);
        let short = &set.scenarios[1];
        assert_eq!(short.len(), 20);
        assert!(short.v[5..].iter().all(|&v| v == 0.0));
        assert!(short.theta[5..].iter().all(|&t| t == 0.0));
        for s in &set.scenarios {
            assert_eq!(s.v[0], 7.0);
            assert_eq!(s.theta[0], 0.01);
        }
    }

    #[test]
    fn generate_identical_journeys() {
        let db = RouteDatabase::new(vec![constant_journey("a", 10.0, 50), constant_journey("b", 10.0, 50)]).unwrap();
        let live = LiveState { v: 10.0, theta: 0.01, v_dot: 0.0 };
        let set = generate(&db, None, &live, 0.0, &cfg()).unwrap();
        assert_eq!(set.scenarios[0], set.scenarios[1]);
    }

    #[test]
    fn generate_needs_candidates() {
        let db = RouteDatabase::new(vec![constant_journey("a", 10.0, 50)]).unwrap();
        let live = LiveState { v: 10.0, theta: 0.0, v_dot: 0.0 };
        assert!(matches!(generate(&db, Some("a"), &live, 0.0, &cfg()), Err(Error::NoScenarios(_))));
    }

    #[test]
    fn horizon_cap_truncates() {
        let db = RouteDatabase::new(vec![constant_journey("a", 2.0, 100)]).unwrap();
        let live = LiveState { v: 2.0, theta: 0.0, v_dot: 0.0 };
        let mut c = cfg();
        c.horizon_cap = Some(7);
        assert_eq!(generate(&db, None, &live, 0.0, &c).unwrap().horizon_len(), 7);
    }

    #[test]
    fn database_validation() {
        assert!(RouteDatabase::new(vec![]).is_err());
        let mut bad = constant_journey("a", 10.0, 20);
        bad.velocity[3] = -1.0;
        assert!(RouteDatabase::new(vec![bad]).is_err());
        let mut bad = constant_journey("a", 10.0, 20);
        bad.position[4] = 4.5;
        assert!(bad.validate().is_err());
        let mismatch = vec![constant_journey("a", 10.0, 20), constant_journey("b", 10.0, 21)];
        assert!(RouteDatabase::new(mismatch).is_err());
        let dup = vec![constant_journey("a", 10.0, 20), constant_journey("a", 10.0, 20)];
        assert!(RouteDatabase::new(dup).is_err());
    }
}
