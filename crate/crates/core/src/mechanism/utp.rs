//! Unicast mechanism: messages (y, n, q, p) and the allocation/tax pair.

use crate::graph::NO_HOP;
use crate::instance::{IndexSets, Protocol};

use super::{
    allocation, demand_gradient, demand_response, mean_of, neighborhood_demand, radial_factor,
    scaled_load, summary_target, value_and_flag, AgentOutcome, Coord, Mechanism, MechanismError,
    Profile, TaxBreakdown, Topology,
};

/// Offsets into a unicast message vector.
#[derive(Debug, Clone)]
struct Layout {
    n_links: usize,
    nbr_pos: Vec<Vec<usize>>,
    proxy_pos: Vec<Vec<usize>>,
    price_links: Vec<Vec<usize>>,
    price_pos: Vec<Vec<usize>>,
    q_off: Vec<usize>,
    p_off: Vec<usize>,
    dim: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct UtpGame {
    topo: Topology,
    lay: Layout,
}

/// Per-link quantities shared by outcome, gradient and best response.
struct LinkState {
    loads: Vec<f64>,
    radial: f64,
    allocation: f64,
}

impl UtpGame {
    pub fn new(topo: Topology) -> Self {
        let n = topo.n_agents();
        let nl = topo.n_links();
        let nbr_pos = topo.position_table(&topo.dir.neighbors, n);
        let proxy_pos = topo.position_table(&topo.dir.proxied, n);
        let price_links: Vec<Vec<usize>> = (0..n).map(|i| topo.price_links(i)).collect();
        let price_pos = topo.position_table(&price_links, nl);
        let mut q_off = Vec::with_capacity(n);
        let mut p_off = Vec::with_capacity(n);
        let mut dim = Vec::with_capacity(n);
        for i in 0..n {
            let q = 1 + topo.dir.neighbors[i].len() * nl;
            let p = q + topo.dir.proxied[i].len();
            q_off.push(q);
            p_off.push(p);
            dim.push(p + price_links[i].len());
        }
        Self {
            topo,
            lay: Layout {
                n_links: nl,
                nbr_pos,
                proxy_pos,
                price_links,
                price_pos,
                q_off,
                p_off,
                dim,
            },
        }
    }

    fn sets(&self) -> &IndexSets {
        &self.topo.sets
    }

    fn n_idx(&self, i: usize, j: usize, l: usize) -> usize {
        1 + self.lay.nbr_pos[i][j] * self.lay.n_links + l
    }

    fn y(&self, m: &Profile, j: usize) -> f64 {
        m.messages[j][0]
    }

    /// y_j^l = 1{l ∈ L_j} y_j.
    fn y_on(&self, m: &Profile, j: usize, l: usize) -> f64 {
        if self.sets().uses[j][l] {
            m.messages[j][0]
        } else {
            0.0
        }
    }

    fn n(&self, m: &Profile, i: usize, j: usize, l: usize) -> f64 {
        m.messages[i][self.n_idx(i, j, l)]
    }

    fn q(&self, m: &Profile, i: usize, j: usize) -> f64 {
        m.messages[i][self.lay.q_off[i] + self.lay.proxy_pos[i][j]]
    }

    fn p(&self, m: &Profile, i: usize, l: usize) -> f64 {
        m.messages[i][self.lay.p_off[i] + self.lay.price_pos[i][l]]
    }

    fn summary_gap(&self, m: &Profile, i: usize, j: usize, l: usize) -> f64 {
        let target = summary_target(
            &self.topo.dir,
            i,
            j,
            l,
            |a, b| self.y_on(m, a, b),
            |a, b, c| self.n(m, a, b, c),
        );
        self.n(m, i, j, l) - target
    }

    fn link_state(&self, m: &Profile, i: usize) -> Result<LinkState, MechanismError> {
        let sets = self.sets();
        let phi = self.topo.dir.phi[i];
        let loads: Vec<f64> = (0..self.lay.n_links)
            .map(|l| {
                let base = neighborhood_demand(
                    &self.topo.dir,
                    i,
                    l,
                    |a, b| self.y_on(m, a, b),
                    |a, b, c| self.n(m, a, b, c),
                );
                if sets.uses[i][l] && phi != NO_HOP {
                    self.q(m, phi, i) + base
                } else {
                    base
                }
            })
            .collect();
        let radial = radial_factor(&sets.capacity, &loads);
        let allocation = allocation(sets, i, radial, self.y(m, i))?;
        Ok(LinkState {
            loads,
            radial,
            allocation,
        })
    }

    /// p̄_i^l: mean of p_j^l over N^l(i).
    fn mean_price(&self, m: &Profile, i: usize, l: usize) -> Result<f64, MechanismError> {
        mean_of(
            self.topo.dir.link_neighbors[i][l]
                .iter()
                .map(|&j| self.p(m, j, l)),
        )
        .ok_or_else(|| MechanismError::EmptyPriceNeighborhood {
            agent: self.sets().agent_ids[i].clone(),
            link: self.sets().link_ids[l].clone(),
        })
    }

    fn proxy_penalty(&self, m: &Profile, i: usize) -> f64 {
        self.topo.dir.proxied[i]
            .iter()
            .map(|&j| (self.q(m, i, j) - self.y(m, j)).powi(2))
            .sum()
    }

    fn slack_sq(&self, st: &LinkState, l: usize) -> f64 {
        (self.sets().capacity[l] - scaled_load(st.radial, st.loads[l])).powi(2)
    }
}

impl Mechanism for UtpGame {
    fn topology(&self) -> &Topology {
        &self.topo
    }

    fn protocol(&self) -> Protocol {
        Protocol::Utp
    }

    fn coords(&self, i: usize) -> Vec<Coord> {
        let mut out = vec![Coord::Demand];
        for &j in &self.topo.dir.neighbors[i] {
            for l in 0..self.lay.n_links {
                out.push(Coord::Summary { via: j, link: l });
            }
        }
        out.extend(
            self.topo.dir.proxied[i]
                .iter()
                .map(|&j| Coord::Proxy { of: j }),
        );
        out.extend(
            self.lay.price_links[i]
                .iter()
                .map(|&l| Coord::Price { link: l }),
        );
        out
    }

    fn dim(&self, i: usize) -> usize {
        self.lay.dim[i]
    }

    fn dimension_formula(&self, i: usize) -> usize {
        let relay = if self.topo.extended {
            self.topo.cover.relay_links[i].len()
        } else {
            0
        };
        1 + self.topo.dir.neighbors[i].len() * self.lay.n_links
            + self.topo.dir.proxied[i].len()
            + self.sets().routes[i].len()
            + relay
    }

    fn zero_profile(&self) -> Profile {
        Profile {
            messages: self.lay.dim.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    fn outcome(&self, m: &Profile, i: usize) -> Result<AgentOutcome, MechanismError> {
        let sets = self.sets();
        let st = self.link_state(m, i)?;
        let proxy = self.proxy_penalty(m, i);
        let mut tax = TaxBreakdown::default();
        for l in 0..self.lay.n_links {
            let summary: f64 = self.topo.dir.neighbors[i]
                .iter()
                .map(|&j| self.summary_gap(m, i, j, l).powi(2))
                .sum();
            let own = sets.uses[i][l];
            if own || self.topo.is_relay(i, l) {
                let pbar = self.mean_price(m, i, l)?;
                let dp = self.p(m, i, l) - pbar;
                if own {
                    tax.push("price_rate", Some(l), pbar * st.allocation);
                }
                tax.push("summary", Some(l), summary);
                if own {
                    tax.push("proxy", Some(l), proxy);
                }
                tax.push("price_consensus", Some(l), dp * dp);
                tax.push("slackness", Some(l), dp * pbar * self.slack_sq(&st, l));
            } else {
                tax.push("summary", Some(l), summary);
            }
        }
        let (value, domain_violation) = value_and_flag(sets, i, st.allocation);
        let tax_total = tax.total();
        Ok(AgentOutcome {
            allocation: st.allocation,
            radial: st.radial,
            loads: st.loads,
            tax,
            tax_total,
            value,
            utility: value - tax_total,
            domain_violation,
        })
    }

    fn gradient(&self, m: &Profile, i: usize) -> Result<Vec<f64>, MechanismError> {
        let sets = self.sets();
        let st = self.link_state(m, i)?;
        let mut g = vec![0.0; self.dim(i)];
        let mut price = 0.0;
        for &l in &sets.routes[i] {
            price += self.mean_price(m, i, l)?;
        }
        g[0] = demand_gradient(sets, i, st.radial, st.allocation, price);
        for &j in &self.topo.dir.neighbors[i] {
            for l in 0..self.lay.n_links {
                g[self.n_idx(i, j, l)] = -2.0 * self.summary_gap(m, i, j, l);
            }
        }
        let reps = sets.routes[i].len() as f64;
        for (k, &j) in self.topo.dir.proxied[i].iter().enumerate() {
            g[self.lay.q_off[i] + k] = -2.0 * reps * (self.q(m, i, j) - self.y(m, j));
        }
        for (k, &l) in self.lay.price_links[i].iter().enumerate() {
            let pbar = self.mean_price(m, i, l)?;
            g[self.lay.p_off[i] + k] =
                -(2.0 * (self.p(m, i, l) - pbar) + pbar * self.slack_sq(&st, l));
        }
        Ok(g)
    }

    fn best_response(&self, m: &Profile, i: usize) -> Result<Vec<f64>, MechanismError> {
        let sets = self.sets();
        let st = self.link_state(m, i)?;
        let mut out = vec![0.0; self.dim(i)];
        let mut price = 0.0;
        for &l in &sets.routes[i] {
            price += self.mean_price(m, i, l)?;
        }
        out[0] = demand_response(sets, i, st.radial, price)?;
        for &j in &self.topo.dir.neighbors[i] {
            for l in 0..self.lay.n_links {
                let k = self.n_idx(i, j, l);
                out[k] = (m.messages[i][k] - self.summary_gap(m, i, j, l)).max(0.0);
            }
        }
        for (k, &j) in self.topo.dir.proxied[i].iter().enumerate() {
            out[self.lay.q_off[i] + k] = self.y(m, j);
        }
        for (k, &l) in self.lay.price_links[i].iter().enumerate() {
            let pbar = self.mean_price(m, i, l)?;
            out[self.lay.p_off[i] + k] = (pbar - pbar * self.slack_sq(&st, l) / 2.0).max(0.0);
        }
        Ok(out)
    }

    fn own_price_sum(&self, m: &Profile, i: usize) -> f64 {
        self.sets().routes[i].iter().map(|&l| self.p(m, i, l)).sum()
    }
}
