//! First-order test of the equilibrium conditions. Own utilities are
//! concave in the own message, so vanishing projected gradients suffice.

use serde::Serialize;

use crate::mechanism::{Mechanism, Profile};

use super::EquilibriumError;

#[derive(Debug, Clone, Serialize)]
pub struct AgentResidual {
    pub agent: String,
    pub max_residual: f64,
    /// Label of the component with the largest residual.
    pub worst: Option<String>,
    pub utility: f64,
    pub domain_violation: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderReport {
    pub tol: f64,
    pub max_residual: f64,
    pub domain_violation: bool,
    pub agents: Vec<AgentResidual>,
    pub passed: bool,
}

/// Residual of one component: |∂û| at interior points, the positive part
/// of ∂û on the boundary value 0.
fn residual(value: f64, grad: f64, open: bool) -> f64 {
    let r = if open || value > 0.0 {
        grad.abs()
    } else {
        grad.max(0.0)
    };
    if r.is_nan() {
        f64::INFINITY
    } else {
        r
    }
}

pub fn verify_ne(
    game: &dyn Mechanism,
    profile: &Profile,
    tol: f64,
) -> Result<FirstOrderReport, EquilibriumError> {
    game.check_shape(profile)?;
    let sets = &game.topology().sets;
    let mut agents = Vec::with_capacity(sets.n_agents());
    for i in 0..sets.n_agents() {
        let out = game.outcome(profile, i)?;
        let grad = game.gradient(profile, i)?;
        let coords = game.coords(i);
        let mut worst = None;
        let mut max_residual = if out.domain_violation {
            f64::INFINITY
        } else {
            0.0
        };
        for ((c, &v), &g) in coords.iter().zip(&profile.messages[i]).zip(&grad) {
            let r = residual(v, g, c.strictly_positive());
            if r > max_residual || worst.is_none() && r == max_residual && r > 0.0 {
                max_residual = r;
                worst = Some(c.label(sets));
            }
        }
        agents.push(AgentResidual {
            agent: sets.agent_ids[i].clone(),
            max_residual,
            worst,
            utility: out.utility,
            domain_violation: out.domain_violation,
        });
    }
    let max_residual = agents.iter().map(|a| a.max_residual).fold(0.0, f64::max);
    let domain_violation = agents.iter().any(|a| a.domain_violation);
    Ok(FirstOrderReport {
        tol,
        max_residual,
        domain_violation,
        passed: !domain_violation && max_residual <= tol,
        agents,
    })
}
