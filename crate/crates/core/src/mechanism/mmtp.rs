//! Multicast mechanism: the unicast messages plus per-group price
//! splitting (p¹, p², a¹, a², w), demand shares s and leader statistics z.

use serde::Serialize;

use crate::graph::NO_HOP;
use crate::instance::{IndexSets, Protocol};

use super::{
    allocation, approx_eq, demand_gradient, demand_response, mean_of, neighborhood_demand,
    radial_factor, scaled_load, summary_target, value_and_flag, AgentOutcome, Coord, Mechanism,
    MechanismError, Profile, TaxBreakdown, Topology, A_MIN,
};

#[derive(Debug, Clone)]
struct Layout {
    n_links: usize,
    nbr_pos: Vec<Vec<usize>>,
    proxy_pos: Vec<Vec<usize>>,
    /// Position of l in L_i.
    route_pos: Vec<Vec<usize>>,
    /// Start of agent j's block inside the p²/a² sections of i.
    pair_start: Vec<Vec<usize>>,
    w_links: Vec<Vec<usize>>,
    w_pos: Vec<Vec<usize>>,
    lead_pos: Vec<Vec<usize>>,
    q_off: Vec<usize>,
    p1_off: Vec<usize>,
    p2_off: Vec<usize>,
    s_off: Vec<usize>,
    w_off: Vec<usize>,
    z1_off: Vec<usize>,
    z2_off: Vec<usize>,
    a1_off: Vec<usize>,
    a2_off: Vec<usize>,
    dim: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MmtpGame {
    topo: Topology,
    lay: Layout,
}

/// Quantities agent i derives for one of its own links.
#[derive(Debug, Clone, Copy)]
struct OwnLink {
    leader: bool,
    /// Q = q_{φ(i),i}.
    proxy_demand: f64,
    z1bar: f64,
    z2bar: f64,
    share: f64,
    /// P² = p²_{φ(i),i}.
    proxy_price: f64,
    /// ŵ_i^l.
    what: f64,
    /// w̄_i^l.
    wbar: f64,
    /// Target of w_i^l for an own link.
    weight_target: f64,
}

/// Group statistics as seen by agent i on one of its links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStats {
    /// z̄¹: the group's maximum demand.
    pub z1bar: f64,
    /// z̄²: how many members attain it.
    pub z2bar: f64,
    /// Whether q_{φ(i),i} attains z̄¹.
    pub attains: bool,
    /// The agent's own contribution to the link load.
    pub share: f64,
}

struct State {
    own: Vec<Option<OwnLink>>,
    loads: Vec<f64>,
    radial: f64,
    allocation: f64,
}

impl MmtpGame {
    pub fn new(topo: Topology) -> Self {
        let n = topo.n_agents();
        let nl = topo.n_links();
        let dir = &topo.dir;
        let routes = &topo.sets.routes;
        let nbr_pos = topo.position_table(&dir.neighbors, n);
        let proxy_pos = topo.position_table(&dir.proxied, n);
        let route_pos = topo.position_table(routes, nl);
        let w_links: Vec<Vec<usize>> = (0..n).map(|i| topo.price_links(i)).collect();
        let w_pos = topo.position_table(&w_links, nl);
        let lead_pos = topo.position_table(&topo.leaders.leads, nl);
        let mut lay = Layout {
            n_links: nl,
            nbr_pos,
            proxy_pos,
            route_pos,
            pair_start: Vec::with_capacity(n),
            w_links,
            w_pos,
            lead_pos,
            q_off: vec![0; n],
            p1_off: vec![0; n],
            p2_off: vec![0; n],
            s_off: vec![0; n],
            w_off: vec![0; n],
            z1_off: vec![0; n],
            z2_off: vec![0; n],
            a1_off: vec![0; n],
            a2_off: vec![0; n],
            dim: vec![0; n],
        };
        for i in 0..n {
            let li = routes[i].len();
            let mut starts = Vec::with_capacity(dir.proxied[i].len());
            let mut pairs = 0;
            for &j in &dir.proxied[i] {
                starts.push(pairs);
                pairs += routes[j].len();
            }
            lay.pair_start.push(starts);
            let leads = topo.leaders.leads.get(i).map_or(0, Vec::len);
            lay.q_off[i] = 1 + dir.neighbors[i].len() * nl;
            lay.p1_off[i] = lay.q_off[i] + dir.proxied[i].len();
            lay.p2_off[i] = lay.p1_off[i] + li;
            lay.s_off[i] = lay.p2_off[i] + pairs;
            lay.w_off[i] = lay.s_off[i] + li;
            lay.z1_off[i] = lay.w_off[i] + lay.w_links[i].len();
            lay.z2_off[i] = lay.z1_off[i] + leads;
            lay.a1_off[i] = lay.z2_off[i] + leads;
            lay.a2_off[i] = lay.a1_off[i] + li;
            lay.dim[i] = lay.a2_off[i] + pairs;
        }
        Self { topo, lay }
    }

    fn sets(&self) -> &IndexSets {
        &self.topo.sets
    }

    fn n_idx(&self, i: usize, j: usize, l: usize) -> usize {
        1 + self.lay.nbr_pos[i][j] * self.lay.n_links + l
    }

    fn pair_idx(&self, i: usize, j: usize, l: usize) -> usize {
        self.lay.pair_start[i][self.lay.proxy_pos[i][j]] + self.lay.route_pos[j][l]
    }

    fn y(&self, m: &Profile, j: usize) -> f64 {
        m.messages[j][0]
    }

    fn n(&self, m: &Profile, i: usize, j: usize, l: usize) -> f64 {
        m.messages[i][self.n_idx(i, j, l)]
    }

    fn q(&self, m: &Profile, i: usize, j: usize) -> f64 {
        m.messages[i][self.lay.q_off[i] + self.lay.proxy_pos[i][j]]
    }

    fn p1(&self, m: &Profile, i: usize, l: usize) -> f64 {
        m.messages[i][self.lay.p1_off[i] + self.lay.route_pos[i][l]]
    }

    fn p2(&self, m: &Profile, i: usize, j: usize, l: usize) -> f64 {
        m.messages[i][self.lay.p2_off[i] + self.pair_idx(i, j, l)]
    }

    fn s(&self, m: &Profile, i: usize, l: usize) -> f64 {
        m.messages[i][self.lay.s_off[i] + self.lay.route_pos[i][l]]
    }

    /// y_j^l for the multicast mechanism: the reported share s_j^l.
    fn s_on(&self, m: &Profile, j: usize, l: usize) -> f64 {
        if self.sets().uses[j][l] {
            self.s(m, j, l)
        } else {
            0.0
        }
    }

    fn w(&self, m: &Profile, i: usize, l: usize) -> f64 {
        m.messages[i][self.lay.w_off[i] + self.lay.w_pos[i][l]]
    }

    fn z1(&self, m: &Profile, i: usize, l: usize) -> f64 {
        m.messages[i][self.lay.z1_off[i] + self.lay.lead_pos[i][l]]
    }

    fn z2(&self, m: &Profile, i: usize, l: usize) -> f64 {
        m.messages[i][self.lay.z2_off[i] + self.lay.lead_pos[i][l]]
    }

    fn a1(&self, m: &Profile, i: usize, l: usize) -> f64 {
        m.messages[i][self.lay.a1_off[i] + self.lay.route_pos[i][l]]
    }

    fn a2(&self, m: &Profile, i: usize, j: usize, l: usize) -> f64 {
        m.messages[i][self.lay.a2_off[i] + self.pair_idx(i, j, l)]
    }

    fn err_link(&self, i: usize, l: usize) -> (String, String) {
        (
            self.sets().agent_ids[i].clone(),
            self.sets().link_ids[l].clone(),
        )
    }

    fn summary_gap(&self, m: &Profile, i: usize, j: usize, l: usize) -> f64 {
        let target = summary_target(
            &self.topo.dir,
            i,
            j,
            l,
            |a, b| self.s_on(m, a, b),
            |a, b, c| self.n(m, a, b, c),
        );
        self.n(m, i, j, l) - target
    }

    /// w̄_i^l: mean of w_j^l over N^l(i).
    fn mean_weight(&self, m: &Profile, i: usize, l: usize) -> Result<f64, MechanismError> {
        mean_of(
            self.topo.dir.link_neighbors[i][l]
                .iter()
                .map(|&j| self.w(m, j, l)),
        )
        .ok_or_else(|| {
            let (agent, link) = self.err_link(i, l);
            MechanismError::EmptyPriceNeighborhood { agent, link }
        })
    }

    fn own_link(&self, m: &Profile, i: usize, l: usize) -> Result<OwnLink, MechanismError> {
        let sets = self.sets();
        let phi = self.topo.dir.phi[i];
        let (proxy_demand, proxy_price, proxy_offset) = if phi == NO_HOP {
            (0.0, 0.0, 1.0)
        } else {
            (
                self.q(m, phi, i),
                self.p2(m, phi, i, l),
                self.a2(m, phi, i, l),
            )
        };
        let leader = self.topo.leaders.leader_of(sets, i, l).ok_or_else(|| {
            let (agent, link) = self.err_link(i, l);
            MechanismError::MissingLeader { agent, link }
        })?;
        let k = sets.group_of[i].expect("multicast agents carry a group");
        let members = &sets.group_link_members[k][l];
        let is_leader = leader == i;
        let (z1bar, z2bar) = if is_leader {
            let mut zmax = proxy_demand;
            for &j in members {
                if j != i {
                    zmax = zmax.max(self.y(m, j));
                }
            }
            // An all-zero group has nothing to attain.
            let mut count = 0.0;
            if zmax > 0.0 {
                count += f64::from(u8::from(approx_eq(proxy_demand, zmax)));
                for &j in members {
                    if j != i && approx_eq(self.y(m, j), zmax) {
                        count += 1.0;
                    }
                }
            }
            (zmax, count)
        } else {
            (self.z1(m, leader, l), self.z2(m, leader, l))
        };
        let share = if proxy_demand == 0.0 || !approx_eq(proxy_demand, z1bar) {
            0.0
        } else if z2bar == 0.0 {
            let (agent, link) = self.err_link(i, l);
            return Err(MechanismError::DivisionGuard { agent, link });
        } else {
            proxy_demand / z2bar
        };
        let others: f64 = members
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| self.p1(m, j, l))
            .sum();
        let own_offset = self.a1(m, i, l) - proxy_offset;
        let (what, weight_target) = if is_leader {
            (others + self.p1(m, i, l) + own_offset, proxy_price + others)
        } else {
            let wc = self.w(m, leader, l);
            (wc - proxy_price + self.p1(m, i, l) + own_offset, wc)
        };
        Ok(OwnLink {
            leader: is_leader,
            proxy_demand,
            z1bar,
            z2bar,
            share,
            proxy_price,
            what,
            wbar: self.mean_weight(m, i, l)?,
            weight_target,
        })
    }

    /// Panics unless l ∈ L_i.
    pub fn group_stats(
        &self,
        m: &Profile,
        i: usize,
        l: usize,
    ) -> Result<GroupStats, MechanismError> {
        assert!(self.sets().uses[i][l], "link is not on the agent's route");
        let o = self.own_link(m, i, l)?;
        Ok(GroupStats {
            z1bar: o.z1bar,
            z2bar: o.z2bar,
            attains: approx_eq(o.proxy_demand, o.z1bar),
            share: o.share,
        })
    }

    /// (ŵ_i^l, w̄_i^l). Panics unless l ∈ L_i.
    pub fn weights(&self, m: &Profile, i: usize, l: usize) -> Result<(f64, f64), MechanismError> {
        assert!(self.sets().uses[i][l], "link is not on the agent's route");
        let o = self.own_link(m, i, l)?;
        Ok((o.what, o.wbar))
    }

    fn state(&self, m: &Profile, i: usize) -> Result<State, MechanismError> {
        let sets = self.sets();
        let mut own = vec![None; self.lay.n_links];
        for &l in &sets.routes[i] {
            own[l] = Some(self.own_link(m, i, l)?);
        }
        let loads: Vec<f64> = (0..self.lay.n_links)
            .map(|l| {
                let base = neighborhood_demand(
                    &self.topo.dir,
                    i,
                    l,
                    |a, b| self.s_on(m, a, b),
                    |a, b, c| self.n(m, a, b, c),
                );
                own[l].map_or(base, |o| o.share + base)
            })
            .collect();
        let radial = radial_factor(&sets.capacity, &loads);
        let allocation = allocation(sets, i, radial, self.y(m, i))?;
        Ok(State {
            own,
            loads,
            radial,
            allocation,
        })
    }

    fn slack_sq(&self, st: &State, l: usize) -> f64 {
        (self.sets().capacity[l] - scaled_load(st.radial, st.loads[l])).powi(2)
    }

    fn price_sum(st: &State) -> f64 {
        st.own.iter().flatten().map(|o| o.proxy_price).sum()
    }
}

impl Mechanism for MmtpGame {
    fn topology(&self) -> &Topology {
        &self.topo
    }

    fn protocol(&self) -> Protocol {
        Protocol::Mmtp
    }

    fn coords(&self, i: usize) -> Vec<Coord> {
        let routes = &self.sets().routes;
        let proxied = &self.topo.dir.proxied[i];
        let leads = &self.topo.leaders.leads[i];
        let mut out = vec![Coord::Demand];
        for &j in &self.topo.dir.neighbors[i] {
            for l in 0..self.lay.n_links {
                out.push(Coord::Summary { via: j, link: l });
            }
        }
        out.extend(proxied.iter().map(|&j| Coord::Proxy { of: j }));
        out.extend(routes[i].iter().map(|&l| Coord::OwnPrice { link: l }));
        for &j in proxied {
            out.extend(
                routes[j]
                    .iter()
                    .map(|&l| Coord::ProxyPrice { of: j, link: l }),
            );
        }
        out.extend(routes[i].iter().map(|&l| Coord::Share { link: l }));
        out.extend(
            self.lay.w_links[i]
                .iter()
                .map(|&l| Coord::Weight { link: l }),
        );
        out.extend(leads.iter().map(|&l| Coord::MaxDemand { link: l }));
        out.extend(leads.iter().map(|&l| Coord::MaxCount { link: l }));
        out.extend(routes[i].iter().map(|&l| Coord::Offset { link: l }));
        for &j in proxied {
            out.extend(
                routes[j]
                    .iter()
                    .map(|&l| Coord::ProxyOffset { of: j, link: l }),
            );
        }
        out
    }

    fn dim(&self, i: usize) -> usize {
        self.lay.dim[i]
    }

    fn dimension_formula(&self, i: usize) -> usize {
        let sets = self.sets();
        let dir = &self.topo.dir;
        let relay = if self.topo.extended {
            self.topo.cover.relay_links[i].len()
        } else {
            0
        };
        let proxied_links: usize = dir.proxied[i].iter().map(|&j| sets.routes[j].len()).sum();
        1 + 4 * sets.routes[i].len()
            + dir.neighbors[i].len() * self.lay.n_links
            + dir.proxied[i].len()
            + 2 * proxied_links
            + 2 * self.topo.leaders.leads[i].len()
            + relay
    }

    fn zero_profile(&self) -> Profile {
        let messages = (0..self.topo.n_agents())
            .map(|i| {
                let mut v = vec![0.0; self.lay.dim[i]];
                for x in &mut v[self.lay.a1_off[i]..] {
                    *x = 1.0;
                }
                v
            })
            .collect();
        Profile { messages }
    }

    fn outcome(&self, m: &Profile, i: usize) -> Result<AgentOutcome, MechanismError> {
        let sets = self.sets();
        let dir = &self.topo.dir;
        let st = self.state(m, i)?;
        let mut tax = TaxBreakdown::default();
        let (mut price_pen, mut offset_pen, mut proxy_pen) = (0.0, 0.0, 0.0);
        for &j in &dir.proxied[i] {
            for &l in &sets.routes[j] {
                price_pen += (self.p2(m, i, j, l) - self.p1(m, j, l)).powi(2);
                offset_pen += (self.a2(m, i, j, l) - self.a1(m, j, l)).powi(2);
            }
            proxy_pen += (self.q(m, i, j) - self.y(m, j)).powi(2);
        }
        tax.push("proxy_price", None, price_pen);
        tax.push("proxy_offset", None, offset_pen);
        tax.push("proxy", None, proxy_pen);
        for l in 0..self.lay.n_links {
            let summary: f64 = dir.neighbors[i]
                .iter()
                .map(|&j| self.summary_gap(m, i, j, l).powi(2))
                .sum();
            if let Some(o) = st.own[l] {
                let e = self.slack_sq(&st, l);
                let dw = o.what - o.wbar;
                tax.push("price_rate", Some(l), o.proxy_price * st.allocation);
                tax.push("summary", Some(l), summary);
                tax.push("share", Some(l), (self.s(m, i, l) - o.share).powi(2));
                if o.leader {
                    tax.push("leader_max", Some(l), (self.z1(m, i, l) - o.z1bar).powi(2));
                    tax.push(
                        "leader_count",
                        Some(l),
                        (self.z2(m, i, l) - o.z2bar).powi(2),
                    );
                }
                tax.push("slackness", Some(l), o.wbar * dw * e);
                tax.push("group_price", Some(l), dw * dw);
                tax.push(
                    "free_riding",
                    Some(l),
                    o.proxy_price
                        * (self.p1(m, i, l) - o.proxy_price)
                        * (o.z1bar - o.proxy_demand).powi(2),
                );
                tax.push(
                    "weight_consensus",
                    Some(l),
                    (self.w(m, i, l) - o.weight_target).powi(2),
                );
            } else if self.topo.is_relay(i, l) {
                let wbar = self.mean_weight(m, i, l)?;
                let dw = self.w(m, i, l) - wbar;
                tax.push("summary", Some(l), summary);
                tax.push("weight_consensus", Some(l), dw * dw);
                tax.push("slackness", Some(l), wbar * dw * self.slack_sq(&st, l));
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
        let dir = &self.topo.dir;
        let lay = &self.lay;
        let st = self.state(m, i)?;
        let mut g = vec![0.0; self.dim(i)];
        g[0] = demand_gradient(sets, i, st.radial, st.allocation, Self::price_sum(&st));
        for &j in &dir.neighbors[i] {
            for l in 0..lay.n_links {
                g[self.n_idx(i, j, l)] = -2.0 * self.summary_gap(m, i, j, l);
            }
        }
        for (k, &j) in dir.proxied[i].iter().enumerate() {
            g[lay.q_off[i] + k] = -2.0 * (self.q(m, i, j) - self.y(m, j));
            for &l in &sets.routes[j] {
                let pi = self.pair_idx(i, j, l);
                g[lay.p2_off[i] + pi] = -2.0 * (self.p2(m, i, j, l) - self.p1(m, j, l));
                g[lay.a2_off[i] + pi] = -2.0 * (self.a2(m, i, j, l) - self.a1(m, j, l));
            }
        }
        for (k, &l) in sets.routes[i].iter().enumerate() {
            let o = st.own[l].expect("own link state");
            let e = o.wbar * self.slack_sq(&st, l);
            let d = o.proxy_price * (o.z1bar - o.proxy_demand).powi(2);
            let dw = 2.0 * (o.what - o.wbar);
            g[lay.p1_off[i] + k] = -(e + dw + d);
            g[lay.a1_off[i] + k] = -(e + dw);
            g[lay.s_off[i] + k] = -2.0 * (self.s(m, i, l) - o.share);
            g[lay.w_off[i] + lay.w_pos[i][l]] = -2.0 * (self.w(m, i, l) - o.weight_target);
            if o.leader {
                let p = lay.lead_pos[i][l];
                g[lay.z1_off[i] + p] = -2.0 * (self.z1(m, i, l) - o.z1bar);
                g[lay.z2_off[i] + p] = -2.0 * (self.z2(m, i, l) - o.z2bar);
            }
        }
        for &l in &lay.w_links[i] {
            if st.own[l].is_none() {
                let wbar = self.mean_weight(m, i, l)?;
                g[lay.w_off[i] + lay.w_pos[i][l]] =
                    -(2.0 * (self.w(m, i, l) - wbar) + wbar * self.slack_sq(&st, l));
            }
        }
        Ok(g)
    }

    fn best_response(&self, m: &Profile, i: usize) -> Result<Vec<f64>, MechanismError> {
        let sets = self.sets();
        let dir = &self.topo.dir;
        let lay = &self.lay;
        let st = self.state(m, i)?;
        let mut out = vec![0.0; self.dim(i)];
        out[0] = demand_response(sets, i, st.radial, Self::price_sum(&st))?;
        for &j in &dir.neighbors[i] {
            for l in 0..lay.n_links {
                let k = self.n_idx(i, j, l);
                out[k] = (m.messages[i][k] - self.summary_gap(m, i, j, l)).max(0.0);
            }
        }
        for (k, &j) in dir.proxied[i].iter().enumerate() {
            out[lay.q_off[i] + k] = self.y(m, j);
            for &l in &sets.routes[j] {
                let pi = self.pair_idx(i, j, l);
                out[lay.p2_off[i] + pi] = self.p1(m, j, l);
                out[lay.a2_off[i] + pi] = self.a1(m, j, l);
            }
        }
        for (k, &l) in sets.routes[i].iter().enumerate() {
            let o = st.own[l].expect("own link state");
            let e = o.wbar * self.slack_sq(&st, l);
            let d = o.proxy_price * (o.z1bar - o.proxy_demand).powi(2);
            let (p1, a1) = (self.p1(m, i, l), self.a1(m, i, l));
            // Only p¹ + a¹ enters ŵ; the optimal sum puts ŵ at w̄ − E/2.
            let target = o.wbar - e / 2.0 - (o.what - p1 - a1);
            let a_small = a1.min(A_MIN);
            let (np1, na1) = if d > 0.0 {
                (0.0, target.max(a_small))
            } else if target - p1 >= a_small {
                (p1, target - p1)
            } else {
                ((target - a_small).max(0.0), a_small)
            };
            out[lay.p1_off[i] + k] = np1;
            out[lay.a1_off[i] + k] = na1;
            out[lay.s_off[i] + k] = o.share;
            out[lay.w_off[i] + lay.w_pos[i][l]] = o.weight_target;
            if o.leader {
                let p = lay.lead_pos[i][l];
                out[lay.z1_off[i] + p] = o.z1bar;
                out[lay.z2_off[i] + p] = o.z2bar;
            }
        }
        for &l in &lay.w_links[i] {
            if st.own[l].is_none() {
                let wbar = self.mean_weight(m, i, l)?;
                out[lay.w_off[i] + lay.w_pos[i][l]] =
                    (wbar - wbar * self.slack_sq(&st, l) / 2.0).max(0.0);
            }
        }
        Ok(out)
    }

    fn own_price_sum(&self, m: &Profile, i: usize) -> f64 {
        self.sets().routes[i]
            .iter()
            .map(|&l| self.p1(m, i, l))
            .sum()
    }
}
