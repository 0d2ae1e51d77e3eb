//! Centralized solvers for the unicast problem and the group-rate
//! reformulation of the multicast problem, with KKT certification and an
//! exhaustive grid validator for tiny instances.

mod barrier;
mod brute;
mod kkt;

use serde::Serialize;
use thiserror::Error;

use crate::instance::{IndexSets, Protocol};

pub use brute::{brute_force_solve, lipschitz_bound, BruteForceSolution};
pub use kkt::{kkt_report, kkt_residual, KktReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Required KKT residual.
    pub kkt_tol: f64,
    pub theta_start: f64,
    /// Barrier weight at which certification is first attempted.
    pub theta_stop: f64,
    /// Smallest barrier weight tried before giving up.
    pub theta_floor: f64,
    pub max_newton_steps: usize,
    /// Initial rates are `interior_fraction * c_min / N`.
    pub interior_fraction: f64,
    /// Refine the barrier point by solving the KKT equalities on the
    /// detected active set.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            theta_start: 1.0,
            theta_stop: 1e-10,
            theta_floor: 1e-16,
            max_newton_steps: 500,
            interior_fraction: 0.5,
            polish: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("solver did not reach KKT residual {tol:e}; last residual {residual:e} at barrier weight {theta:e}")]
    NonConvergence { tol: f64, residual: f64, theta: f64 },
    #[error("brute force supports at most {max} rate variables, instance has {found}")]
    TooManyVariables { max: usize, found: usize },
    #[error("grid step must be positive, got {0}")]
    BadGridStep(f64),
}

/// Primal-dual solution of the centralized problem.
#[derive(Debug, Clone, Serialize)]
pub struct CentralSolution {
    pub protocol: Protocol,
    pub x: Vec<f64>,
    /// Group rates `b[k][l]`; empty for unicast.
    pub b: Vec<Vec<Option<f64>>>,
    pub lambda: Vec<f64>,
    /// Per-(agent, link) duals `mu[i][l]` for l ∈ L_i; empty for unicast.
    pub mu: Vec<Vec<Option<f64>>>,
    pub kkt: KktReport,
    pub kkt_residual: f64,
    pub tol: f64,
    pub objective: f64,
    pub final_theta: f64,
    pub newton_steps: usize,
    pub polished: bool,
}

impl CentralSolution {
    pub fn is_certified(&self) -> bool {
        self.kkt_residual <= self.tol
    }
}

/// Rates at or below this are treated as zero.
pub fn effective_zero(sets: &IndexSets) -> f64 {
    1e-9 * sets.c_max()
}

pub fn solve(sets: &IndexSets, opts: &SolverOptions) -> Result<CentralSolution, OracleError> {
    match sets.protocol {
        Protocol::Utp => solve_utp(sets, opts),
        Protocol::Mmtp => solve_mmtp(sets, opts),
    }
}

pub fn solve_utp(sets: &IndexSets, opts: &SolverOptions) -> Result<CentralSolution, OracleError> {
    barrier::solve(sets, Protocol::Utp, opts)
}

pub fn solve_mmtp(sets: &IndexSets, opts: &SolverOptions) -> Result<CentralSolution, OracleError> {
    barrier::solve(sets, Protocol::Mmtp, opts)
}
