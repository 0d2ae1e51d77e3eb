//! Numerical checks of the equilibrium properties: consensus values,
//! feasibility, price agreement, complementary slackness, stationarity,
//! budget balance, individual rationality and efficiency.

use std::collections::HashMap;

use serde::Serialize;

use crate::instance::{IndexSets, Protocol};
use crate::mechanism::{approx_eq, AgentOutcome, Coord, Mechanism, Profile, Topology};
use crate::oracle::{effective_zero, kkt_report, CentralSolution};
use crate::valuation::ValueAtZero;

use super::{coord_view, max_abs_gap, EquilibriumError};

const FEASIBILITY_TOL: f64 = 1e-9;
const BUDGET_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-8;
const EFFICIENCY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct AuditItem {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

struct Audits(Vec<AuditItem>);

impl Audits {
    fn add(&mut self, name: &str, residual: f64, tol: f64) -> &mut AuditItem {
        let residual = if residual.is_nan() {
            f64::INFINITY
        } else {
            residual
        };
        self.0.push(AuditItem {
            name: name.to_string(),
            residual,
            tol,
            passed: residual <= tol,
            note: None,
        });
        self.0.last_mut().unwrap()
    }
}

/// Running maximum of absolute deviations.
#[derive(Default)]
struct MaxAbs(f64);

impl MaxAbs {
    fn push(&mut self, v: f64) {
        self.0 = if v.is_nan() {
            f64::INFINITY
        } else {
            self.0.max(v.abs())
        };
    }
}

struct Ctx<'a> {
    sets: &'a IndexSets,
    topo: &'a Topology,
    view: Vec<HashMap<Coord, f64>>,
    outcomes: Vec<AgentOutcome>,
    x: Vec<f64>,
}

impl Ctx<'_> {
    fn get(&self, i: usize, c: Coord) -> f64 {
        self.view[i].get(&c).copied().unwrap_or(f64::NAN)
    }

    fn y(&self, i: usize) -> f64 {
        self.get(i, Coord::Demand)
    }

    /// All quotes (agent, value) for a link-indexed coordinate.
    fn quotes(&self, l: usize, make: impl Fn(usize) -> Coord) -> Vec<f64> {
        (0..self.sets.n_agents())
            .filter_map(|i| self.view[i].get(&make(l)).copied())
            .collect()
    }

    fn spread(values: &[f64]) -> f64 {
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        if values.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    fn mean(values: &[f64]) -> f64 {
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    }

    fn stationarity(&self, price: impl Fn(usize) -> f64) -> f64 {
        let zero = effective_zero(self.sets);
        let mut m = MaxAbs::default();
        for i in 0..self.sets.n_agents() {
            let v = &self.sets.valuations[i];
            let xi = self.x[i];
            let p = price(i);
            let gap = if xi > zero {
                v.grad(xi).map_or(f64::INFINITY, |g| g - p)
            } else {
                let g = if xi > 0.0 {
                    v.grad(xi).unwrap_or(f64::INFINITY)
                } else {
                    v.grad_at_zero()
                };
                (g - p).max(0.0)
            };
            m.push(gap);
        }
        m.0
    }
}

/// Per-item audit of a claimed equilibrium. The efficiency item is present
/// only when an oracle solution is supplied.
pub fn audit_ne_properties(
    game: &dyn Mechanism,
    profile: &Profile,
    oracle: Option<&CentralSolution>,
    tol: f64,
) -> Result<Vec<AuditItem>, EquilibriumError> {
    let outcomes = game.outcomes(profile)?;
    let topo = game.topology();
    let ctx = Ctx {
        sets: &topo.sets,
        topo,
        view: coord_view(game, profile),
        x: outcomes.iter().map(|o| o.allocation).collect(),
        outcomes,
    };
    let mut a = Audits(Vec::new());
    match game.protocol() {
        Protocol::Utp => utp_audits(&ctx, &mut a, tol),
        Protocol::Mmtp => mmtp_audits(&ctx, &mut a, tol),
    }
    common_audits(game, profile, &ctx, &mut a);
    if let Some(sol) = oracle {
        a.add("efficiency", max_abs_gap(&ctx.x, &sol.x), EFFICIENCY_TOL);
    }
    Ok(a.0)
}

fn summary_consensus(ctx: &Ctx, demand: impl Fn(usize, usize) -> f64) -> f64 {
    let mut m = MaxAbs::default();
    let dir = &ctx.topo.dir;
    for i in 0..ctx.sets.n_agents() {
        for &j in &dir.neighbors[i] {
            let behind = dir.behind(i, j);
            for l in 0..ctx.sets.n_links() {
                let want: f64 = behind.iter().map(|&h| demand(h, l)).sum();
                m.push(ctx.get(i, Coord::Summary { via: j, link: l }) - want);
            }
        }
    }
    m.0
}

fn proxy_consensus(ctx: &Ctx) -> f64 {
    let mut m = MaxAbs::default();
    for i in 0..ctx.sets.n_agents() {
        for &j in &ctx.topo.dir.proxied[i] {
            m.push(ctx.get(i, Coord::Proxy { of: j }) - ctx.y(j));
        }
    }
    m.0
}

fn utp_audits(ctx: &Ctx, a: &mut Audits, tol: f64) {
    let sets = ctx.sets;
    let nl = sets.n_links();
    let summary = summary_consensus(ctx, |h, l| if sets.uses[h][l] { ctx.y(h) } else { 0.0 });
    a.add("consensus.summary", summary, tol);
    a.add("consensus.proxy", proxy_consensus(ctx), tol);
    let loads = sets.link_loads(&ctx.x);
    let prices: Vec<Vec<f64>> = (0..nl)
        .map(|l| ctx.quotes(l, |link| Coord::Price { link }))
        .collect();
    let spread = prices.iter().map(|p| Ctx::spread(p)).fold(0.0, f64::max);
    a.add("price.consensus", spread, tol);
    let mut slack = MaxAbs::default();
    for l in 0..nl {
        slack.push(Ctx::mean(&prices[l]) * (sets.capacity[l] - loads[l]));
    }
    a.add("price.slackness", slack.0, tol);
    let own = |i: usize| -> f64 {
        sets.routes[i]
            .iter()
            .map(|&l| ctx.get(i, Coord::Price { link: l }))
            .sum()
    };
    a.add("stationarity", ctx.stationarity(own), tol);
    let lambda: Vec<f64> = prices.iter().map(|p| Ctx::mean(p)).collect();
    let kkt = kkt_report(sets, &ctx.x, &[], &lambda, &[]);
    a.add("kkt", kkt.max(), tol);
}

fn mmtp_audits(ctx: &Ctx, a: &mut Audits, tol: f64) {
    let sets = ctx.sets;
    let topo = ctx.topo;
    let nl = sets.n_links();
    let n = sets.n_agents();
    let share_of = |h: usize, l: usize| {
        if sets.uses[h][l] {
            ctx.get(h, Coord::Share { link: l })
        } else {
            0.0
        }
    };
    a.add("consensus.summary", summary_consensus(ctx, share_of), tol);
    a.add("consensus.proxy", proxy_consensus(ctx), tol);

    let (mut p2, mut a2) = (MaxAbs::default(), MaxAbs::default());
    for i in 0..n {
        for &j in &topo.dir.proxied[i] {
            for &l in &sets.routes[j] {
                p2.push(
                    ctx.get(i, Coord::ProxyPrice { of: j, link: l })
                        - ctx.get(j, Coord::OwnPrice { link: l }),
                );
                a2.push(
                    ctx.get(i, Coord::ProxyOffset { of: j, link: l })
                        - ctx.get(j, Coord::Offset { link: l }),
                );
            }
        }
    }
    a.add("consensus.proxy_price", p2.0, tol);
    a.add("consensus.proxy_offset", a2.0, tol);

    // Shares and leader statistics against the demands y.
    let (mut share, mut leader) = (MaxAbs::default(), MaxAbs::default());
    let mut group_top = vec![vec![0.0; nl]; sets.n_groups()];
    for k in 0..sets.n_groups() {
        for l in 0..nl {
            let members = &sets.group_link_members[k][l];
            if members.is_empty() {
                continue;
            }
            let ymax = members.iter().map(|&i| ctx.y(i)).fold(0.0, f64::max);
            let count = if ymax > 0.0 {
                members
                    .iter()
                    .filter(|&&i| approx_eq(ctx.y(i), ymax))
                    .count() as f64
            } else {
                0.0
            };
            group_top[k][l] = members.iter().map(|&i| ctx.x[i]).fold(0.0, f64::max);
            for &i in members {
                let yi = ctx.y(i);
                let want = if yi > 0.0 && approx_eq(yi, ymax) {
                    yi / count
                } else {
                    0.0
                };
                share.push(ctx.get(i, Coord::Share { link: l }) - want);
            }
            if let Some(c) = topo.leaders.leader[k][l] {
                leader.push(ctx.get(c, Coord::MaxDemand { link: l }) - ymax);
                leader.push(ctx.get(c, Coord::MaxCount { link: l }) - count);
            }
        }
    }
    a.add("consensus.share", share.0, tol);
    a.add("consensus.leader", leader.0, tol);

    let weights: Vec<Vec<f64>> = (0..nl)
        .map(|l| ctx.quotes(l, |link| Coord::Weight { link }))
        .collect();
    let spread = weights.iter().map(|w| Ctx::spread(w)).fold(0.0, f64::max);
    a.add("price.weight_consensus", spread, tol);
    let lambda: Vec<f64> = weights.iter().map(|w| Ctx::mean(w)).collect();
    let mut group_sum = MaxAbs::default();
    for k in 0..sets.n_groups() {
        for l in 0..nl {
            let members = &sets.group_link_members[k][l];
            if members.is_empty() {
                continue;
            }
            let total: f64 = members
                .iter()
                .map(|&i| ctx.get(i, Coord::OwnPrice { link: l }))
                .sum();
            group_sum.push(total - lambda[l]);
        }
    }
    a.add("price.group_sum", group_sum.0, tol);

    let loads = sets.link_loads(&ctx.x);
    let mut slack = MaxAbs::default();
    for l in 0..nl {
        slack.push(lambda[l] * (sets.capacity[l] - loads[l]));
    }
    a.add("price.slackness", slack.0, tol);
    let mut free = MaxAbs::default();
    for i in 0..n {
        let k = sets.group_of[i].expect("multicast agents carry a group");
        for &l in &sets.routes[i] {
            free.push(ctx.get(i, Coord::OwnPrice { link: l }) * (group_top[k][l] - ctx.x[i]));
        }
    }
    a.add("price.free_riding", free.0, tol);

    let own = |i: usize| -> f64 {
        sets.routes[i]
            .iter()
            .map(|&l| ctx.get(i, Coord::OwnPrice { link: l }))
            .sum()
    };
    a.add("stationarity", ctx.stationarity(own), tol);
    let mu: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            (0..nl)
                .map(|l| sets.uses[i][l].then(|| ctx.get(i, Coord::OwnPrice { link: l })))
                .collect()
        })
        .collect();
    let b: Vec<Vec<Option<f64>>> = (0..sets.n_groups())
        .map(|k| {
            (0..nl)
                .map(|l| (!sets.group_link_members[k][l].is_empty()).then_some(group_top[k][l]))
                .collect()
        })
        .collect();
    let kkt = kkt_report(sets, &ctx.x, &b, &lambda, &mu);
    a.add("kkt", kkt.max(), tol);
}

fn common_audits(game: &dyn Mechanism, profile: &Profile, ctx: &Ctx, a: &mut Audits) {
    let sets = ctx.sets;
    let loads = sets.link_loads(&ctx.x);
    let over = loads
        .iter()
        .zip(&sets.capacity)
        .map(|(f, c)| f - c)
        .fold(0.0, f64::max);
    a.add("feasibility", over, FEASIBILITY_TOL);

    let total_tax: f64 = ctx.outcomes.iter().map(|o| o.tax_total).sum();
    a.add("budget.balance", (-total_tax).max(0.0), BUDGET_TOL);
    let payments: f64 = (0..sets.n_agents())
        .map(|i| ctx.x[i] * game.own_price_sum(profile, i))
        .sum();
    a.add(
        "budget.identity",
        (total_tax - payments).abs(),
        IDENTITY_TOL,
    )
    .note = Some(format!("total tax {total_tax}"));

    let mut ir = 0.0f64;
    let mut vacuous = Vec::new();
    for (i, o) in ctx.outcomes.iter().enumerate() {
        match sets.valuations[i].value_at_zero() {
            ValueAtZero::Finite(v0) => ir = ir.max(v0 - o.utility),
            ValueAtZero::NegativeInfinity => vacuous.push(sets.agent_ids[i].clone()),
        }
    }
    let item = a.add("individual_rationality", ir.max(0.0), BUDGET_TOL);
    if !vacuous.is_empty() {
        item.note = Some(format!(
            "vacuous for agents with v(0) = -inf: {}",
            vacuous.join(", ")
        ));
    }
}
