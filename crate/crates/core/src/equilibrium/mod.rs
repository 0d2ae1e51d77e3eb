//! Equilibrium construction from oracle solutions, first-order
//! verification, property audits, deviation fuzzing and best-response
//! dynamics.

mod audit;
mod construct;
mod dynamics;
mod fuzz;
mod verify;

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::instance::Protocol;
use crate::mechanism::{Coord, Mechanism, MechanismError, Profile};
use crate::oracle::CentralSolution;

pub use audit::{audit_ne_properties, AuditItem};
pub use construct::construct_ne;
pub use dynamics::{
    random_profile, run_dynamics, DynamicsOptions, DynamicsStep, DynamicsTrace, Order, Snapshot,
};
pub use fuzz::{deviation_fuzz, DeviationReport, Witness, GAIN_TOL};
pub use verify::{verify_ne, AgentResidual, FirstOrderReport};

/// Default tolerance of first-order and audit checks.
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("oracle solution is not certified: KKT residual {residual:e} exceeds {tol:e}")]
    Uncertified { residual: f64, tol: f64 },
    #[error("scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("oracle solution is for {found}, mechanism is {expected}")]
    ProtocolMismatch { expected: Protocol, found: Protocol },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("round {round}, agent `{agent}`: {source}")]
    Dynamics {
        round: usize,
        agent: String,
        #[source]
        source: MechanismError,
        /// Steps and snapshots completed before the failure.
        partial: Box<DynamicsTrace>,
    },
}

/// Everything known about a claimed equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct NeCertificate {
    pub protocol: Protocol,
    pub tol: f64,
    pub first_order: FirstOrderReport,
    pub audits: Vec<AuditItem>,
    /// ‖x̂ − x*‖∞ when an oracle solution was supplied.
    pub efficiency_gap: Option<f64>,
    pub passed: bool,
}

impl NeCertificate {
    /// Names of the failed checks, first-order verification first.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.first_order.passed {
            out.push("first_order".to_string());
        }
        out.extend(
            self.audits
                .iter()
                .filter(|a| !a.passed)
                .map(|a| a.name.clone()),
        );
        out
    }
}

/// Runs [`verify_ne`] and [`audit_ne_properties`] and combines them.
pub fn certify(
    game: &dyn Mechanism,
    profile: &Profile,
    oracle: Option<&CentralSolution>,
    tol: f64,
) -> Result<NeCertificate, EquilibriumError> {
    let first_order = verify_ne(game, profile, tol)?;
    let audits = audit_ne_properties(game, profile, oracle, tol)?;
    let efficiency_gap = audits
        .iter()
        .find(|a| a.name == "efficiency")
        .map(|a| a.residual);
    let passed = first_order.passed && audits.iter().all(|a| a.passed);
    Ok(NeCertificate {
        protocol: game.protocol(),
        tol,
        first_order,
        audits,
        efficiency_gap,
        passed,
    })
}

/// Message components of every agent, keyed by label.
pub(crate) fn coord_view(game: &dyn Mechanism, profile: &Profile) -> Vec<HashMap<Coord, f64>> {
    profile
        .messages
        .iter()
        .enumerate()
        .map(|(i, m)| game.coords(i).into_iter().zip(m.iter().copied()).collect())
        .collect()
}

/// ‖a − b‖∞, NaN-propagating.
pub(crate) fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        let d = (x - y).abs();
        if d.is_nan() {
            f64::NAN
        } else {
            m.max(d)
        }
    })
}
