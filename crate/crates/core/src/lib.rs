//! Scenario model predictive control for plug-in hybrid energy management.
//!
//! The crate is organised bottom-up: [`powertrain`] holds the static vehicle
//! model, [`horizon`] turns a predicted driver behaviour into the parameters
//! of the convex power-split problem, [`feasibility`] certifies those
//! problems, [`solver`] solves them with a scenario ADMM, [`scenario`] builds
//! predictions from a database of previous journeys and [`simulator`] runs
//! the controllers in closed loop.

pub mod config;
pub mod error;
pub mod feasibility;
pub mod horizon;
pub mod powertrain;
pub mod scenario;
pub mod simulator;
pub mod solver;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use horizon::{DriverScenario, HeuristicPolicy, HorizonStep, ScenarioHorizon};
pub use powertrain::{BatteryParams, EngineMap, MotorMap, Powertrain, Quadratic, VehicleParams};
pub use scenario::{JourneyRecord, RouteDatabase};
pub use solver::{AdmmConfig, AdmmSolver, AdmmState, SmpcProblem, SolveResult};
pub use simulator::{compare_controllers, run_closed_loop, synthetic_problem, ControllerKind, SimulationLog};
