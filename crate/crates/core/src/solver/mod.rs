//! Scenario ADMM solver and its building blocks.

pub mod admm;
pub mod bundle;
pub mod scalar;
pub mod structured;

pub use admm::{
    compute_residuals, solve, update_duals, within_boxes, AdmmConfig, AdmmSolver, AdmmState, IterationRecord,
    Residuals, SmpcProblem, SolveResult,
};
pub use scalar::{minimize_prox, Derivatives, ScalarSolution, StepCost};
pub use structured::{psi_mul, psi_t_mul, structured_solve, StructuredSolver};
pub use bundle::{read_problem_bundle, write_problem_bundle, write_result_bundle};
