use serde::Serialize;

use crate::instance::{IndexSets, Protocol};

use super::{effective_zero, CentralSolution};

/// Max-norm residuals of the KKT system, one per condition family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KktReport {
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub complementary_slackness: f64,
    pub stationarity: f64,
    /// |λ^l − Σ_{G_k^l} μ_i^l|; zero for unicast.
    pub group_price: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [
            self.primal_feasibility,
            self.dual_feasibility,
            self.complementary_slackness,
            self.stationarity,
            self.group_price,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn kkt_residual(sets: &IndexSets, sol: &CentralSolution) -> KktReport {
    kkt_report(sets, &sol.x, &sol.b, &sol.lambda, &sol.mu)
}

fn stationarity_gap(sets: &IndexSets, i: usize, xi: f64, price: f64) -> f64 {
    let v = &sets.valuations[i];
    if xi > effective_zero(sets) {
        match v.grad(xi) {
            Ok(g) => (g - price).abs(),
            Err(_) => f64::INFINITY,
        }
    } else {
        let g = if xi > 0.0 {
            v.grad(xi).unwrap_or(f64::INFINITY)
        } else {
            v.grad_at_zero()
        };
        (g - price).max(0.0)
    }
}

/// Evaluates the KKT conditions for `(x, λ)` (unicast) or `(x, b, λ, μ)`
/// (multicast). Stationarity uses the one-sided branch for rates below
/// [`effective_zero`].
pub fn kkt_report(
    sets: &IndexSets,
    x: &[f64],
    b: &[Vec<Option<f64>>],
    lambda: &[f64],
    mu: &[Vec<Option<f64>>],
) -> KktReport {
    let mut r = KktReport::default();
    let upd = |slot: &mut f64, v: f64| {
        *slot = if v.is_nan() {
            f64::INFINITY
        } else {
            slot.max(v)
        }
    };
    for &xi in x {
        upd(&mut r.primal_feasibility, (-xi).max(0.0));
    }
    for &lam in lambda {
        upd(&mut r.dual_feasibility, (-lam).max(0.0));
    }
    match sets.protocol {
        Protocol::Utp => {
            for l in 0..sets.n_links() {
                let load: f64 = sets.link_users[l].iter().map(|&i| x[i]).sum();
                let slack = sets.capacity[l] - load;
                upd(&mut r.primal_feasibility, (-slack).max(0.0));
                upd(&mut r.complementary_slackness, (lambda[l] * slack).abs());
            }
            for i in 0..sets.n_agents() {
                let price: f64 = sets.routes[i].iter().map(|&l| lambda[l]).sum();
                upd(&mut r.stationarity, stationarity_gap(sets, i, x[i], price));
            }
        }
        Protocol::Mmtp => {
            let group_rate = |k: usize, l: usize| b[k][l].unwrap_or(f64::NAN);
            let mu_of = |i: usize, l: usize| mu[i][l].unwrap_or(f64::NAN);
            for l in 0..sets.n_links() {
                let load: f64 = sets.link_groups[l].iter().map(|&k| group_rate(k, l)).sum();
                let slack = sets.capacity[l] - load;
                upd(&mut r.primal_feasibility, (-slack).max(0.0));
                upd(&mut r.complementary_slackness, (lambda[l] * slack).abs());
                for &k in &sets.link_groups[l] {
                    let members = &sets.group_link_members[k][l];
                    let total: f64 = members.iter().map(|&i| mu_of(i, l)).sum();
                    upd(&mut r.group_price, (lambda[l] - total).abs());
                    for &i in members {
                        let gap = group_rate(k, l) - x[i];
                        upd(&mut r.primal_feasibility, (-gap).max(0.0));
                        upd(&mut r.dual_feasibility, (-mu_of(i, l)).max(0.0));
                        upd(&mut r.complementary_slackness, (mu_of(i, l) * gap).abs());
                    }
                }
            }
            for i in 0..sets.n_agents() {
                let price: f64 = sets.routes[i].iter().map(|&l| mu_of(i, l)).sum();
                upd(&mut r.stationarity, stationarity_gap(sets, i, x[i], price));
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{derive_index_sets, AgentSpec, LinkSpec, ProblemInstance};
    use crate::valuation::{Family, ValuationSpec};

    fn worked_example() -> IndexSets {
        let inst = ProblemInstance {
            protocol: Protocol::Utp,
            links: vec![LinkSpec {
                id: "1".into(),
                capacity: 1.0,
            }],
            agents: (1..=3)
                .map(|i| AgentSpec {
                    id: i.to_string(),
                    group: None,
                    links: vec!["1".into()],
                    valuation: ValuationSpec {
                        family: Family::ScaledLog,
                        a: i as f64,
                        alpha: None,
                    },
                })
                .collect(),
            message_graph: None,
        };
        derive_index_sets(&inst).unwrap()
    }

    #[test]
    fn exact_solution_has_tiny_residuals() {
        let sets = worked_example();
        let r = kkt_report(&sets, &[1.0 / 6.0, 1.0 / 3.0, 0.5], &[], &[6.0], &[]);
        assert!(r.max() <= 1e-12, "{r:?}");
    }

    #[test]
    fn perturbed_rate_shows_in_stationarity() {
        let sets = worked_example();
        let x1 = 1.0 / 6.0 + 0.1;
        let r = kkt_report(&sets, &[x1, 1.0 / 3.0, 0.5], &[], &[6.0], &[]);
        // Hand evaluation: 1 / 0.2666... - 6 = -2.25.
        assert!((r.stationarity - 2.25).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn zero_price_on_slack_link_has_no_slackness_residual() {
        let sets = worked_example();
        let r = kkt_report(&sets, &[0.1, 0.1, 0.1], &[], &[0.0], &[]);
        assert_eq!(r.complementary_slackness, 0.0);
    }
}
