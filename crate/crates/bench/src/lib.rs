//! Fixtures shared by the benchmarks.

use smpc_core::{synthetic_problem, ExperimentConfig, SmpcProblem};

/// Seed of every benchmark problem.
pub const SEED: u64 = 7;

/// The synthetic first-update problem with `n` steps and `s` scenarios
/// under the default configuration.
pub fn problem(n: usize, s: usize) -> SmpcProblem {
    synthetic_problem(&ExperimentConfig::default(), n, s, SEED).expect("synthetic problem builds")
}
