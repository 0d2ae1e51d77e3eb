//! Message layouts and outcome rules of the two mechanisms.

mod json;
mod mmtp;
mod utp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{
    assign_group_leaders, assign_group_leaders_with, build_link_covers, build_neighbor_directory,
    link_users_connected, phi_override_from_spec, GraphError, LeaderAssignment, LinkCover,
    MessageTree, NeighborDirectory, NO_HOP,
};
use crate::instance::{
    derive_index_sets, validate_instance, IndexSets, InstanceError, ProblemInstance, Protocol,
};

pub use json::{profile_from_json, profile_to_json, ProfileError};
pub use mmtp::{GroupStats, MmtpGame};
pub use utp::UtpGame;

/// Relative tolerance of the max-attainment tests.
pub const ATTAIN_TOL: f64 = 1e-9;
/// Floor used by best responses for the strictly positive a¹ components.
pub const A_MIN: f64 = 1e-9;

/// Equality up to [`ATTAIN_TOL`] relative to the larger magnitude.
pub fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= ATTAIN_TOL * a.abs().max(b.abs())
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("assumption violated: {}", .messages.join("; "))]
    Assumption {
        messages: Vec<String>,
        /// The violation can be lifted by the link-cover variant.
        suggest_extended: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TopologyOptions {
    /// Use link covers so that relay agents quote prices for links whose
    /// users are not connected in the message tree.
    pub extended: bool,
    /// Break group-leader ties at random under this seed instead of by
    /// smallest id.
    pub leader_seed: Option<u64>,
    /// Skip the standing-assumption checks (for probing error paths).
    pub unchecked: bool,
}

/// Everything a mechanism needs to know about an instance.
#[derive(Debug, Clone)]
pub struct Topology {
    pub sets: IndexSets,
    pub tree: MessageTree,
    pub dir: NeighborDirectory,
    pub leaders: LeaderAssignment,
    pub cover: LinkCover,
    pub extended: bool,
}

impl Topology {
    pub fn build(instance: &ProblemInstance, opts: TopologyOptions) -> Result<Self, TopologyError> {
        let sets = derive_index_sets(instance)?;
        let spec = instance.message_graph.as_ref().ok_or(GraphError::Missing)?;
        let tree = MessageTree::from_spec(spec, &sets)?;
        let phi = phi_override_from_spec(spec, &sets)?;
        let mut dir = build_neighbor_directory(&tree, &sets, Some(&phi))?;
        let leaders = match (sets.protocol, opts.leader_seed) {
            (Protocol::Utp, _) => LeaderAssignment {
                leads: vec![Vec::new(); sets.n_agents()],
                ..LeaderAssignment::default()
            },
            (Protocol::Mmtp, None) => assign_group_leaders(&tree, &sets),
            (Protocol::Mmtp, Some(seed)) => {
                assign_group_leaders_with(&tree, &sets, &mut ChaCha8Rng::seed_from_u64(seed))
            }
        };
        let cover = build_link_covers(&tree, &sets);
        if !opts.unchecked {
            let mut messages = Vec::new();
            let mut suggest_extended = false;
            let report = validate_instance(instance)?;
            messages.extend(report.violations.into_iter().map(|v| v.message));
            if !opts.extended {
                for (l, ok) in link_users_connected(&tree, &sets).into_iter().enumerate() {
                    if !ok {
                        suggest_extended = true;
                        messages.push(format!(
                            "users of link `{}` are not connected in the message tree",
                            sets.link_ids[l]
                        ));
                    }
                }
            }
            for &(k, l) in &leaders.violations {
                messages.push(format!(
                    "group `{}` on link `{}` has no member adjacent to all other members",
                    sets.group_ids[k], sets.link_ids[l]
                ));
            }
            if !messages.is_empty() {
                return Err(TopologyError::Assumption {
                    messages,
                    suggest_extended: suggest_extended && !opts.extended,
                });
            }
        }
        if opts.extended {
            dir.apply_cover(&sets, &cover);
        }
        Ok(Self {
            sets,
            tree,
            dir,
            leaders,
            cover,
            extended: opts.extended,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.sets.n_agents()
    }

    pub fn n_links(&self) -> usize {
        self.sets.n_links()
    }

    /// Links for which the agent quotes a price: L_i, plus L̂_i when extended.
    pub(crate) fn price_links(&self, i: usize) -> Vec<usize> {
        let mut out = self.sets.routes[i].clone();
        if self.extended {
            out.extend(self.cover.relay_links[i].iter().copied());
            out.sort_unstable();
        }
        out
    }

    pub(crate) fn is_relay(&self, i: usize, l: usize) -> bool {
        self.extended && self.cover.relay_links[i].binary_search(&l).is_ok()
    }

    /// `table[i][j]` = position of j in `lists[i]`, or [`NO_HOP`].
    pub(crate) fn position_table(&self, lists: &[Vec<usize>], width: usize) -> Vec<Vec<usize>> {
        lists
            .iter()
            .map(|list| {
                let mut row = vec![NO_HOP; width];
                for (p, &j) in list.iter().enumerate() {
                    row[j] = p;
                }
                row
            })
            .collect()
    }
}

/// Label of one component of an agent's message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coord {
    /// y_i.
    Demand,
    /// n_{i,via}^link.
    Summary { via: usize, link: usize },
    /// q_{i,of}.
    Proxy { of: usize },
    /// Unicast p_i^link.
    Price { link: usize },
    /// Multicast p_i^{1,link}.
    OwnPrice { link: usize },
    /// Multicast p_{i,of}^{2,link}.
    ProxyPrice { of: usize, link: usize },
    /// Multicast group-demand share s_i^link.
    Share { link: usize },
    /// Multicast group price w_i^link.
    Weight { link: usize },
    /// Leader's z_i^{1,link}.
    MaxDemand { link: usize },
    /// Leader's z_i^{2,link}.
    MaxCount { link: usize },
    /// Multicast a_i^{1,link}.
    Offset { link: usize },
    /// Multicast a_{i,of}^{2,link}.
    ProxyOffset { of: usize, link: usize },
}

impl Coord {
    /// Whether the component lives in the open half-line (0, ∞).
    pub fn strictly_positive(&self) -> bool {
        matches!(self, Coord::Offset { .. } | Coord::ProxyOffset { .. })
    }

    pub fn label(&self, sets: &IndexSets) -> String {
        let a = |i: usize| sets.agent_ids[i].as_str();
        let l = |k: usize| sets.link_ids[k].as_str();
        match *self {
            Coord::Demand => "y".into(),
            Coord::Summary { via, link } => format!("n[{}][{}]", a(via), l(link)),
            Coord::Proxy { of } => format!("q[{}]", a(of)),
            Coord::Price { link } => format!("p[{}]", l(link)),
            Coord::OwnPrice { link } => format!("p1[{}]", l(link)),
            Coord::ProxyPrice { of, link } => format!("p2[{}][{}]", a(of), l(link)),
            Coord::Share { link } => format!("s[{}]", l(link)),
            Coord::Weight { link } => format!("w[{}]", l(link)),
            Coord::MaxDemand { link } => format!("z1[{}]", l(link)),
            Coord::MaxCount { link } => format!("z2[{}]", l(link)),
            Coord::Offset { link } => format!("a1[{}]", l(link)),
            Coord::ProxyOffset { of, link } => format!("a2[{}][{}]", a(of), l(link)),
        }
    }
}

/// One flat message vector per agent, laid out by the mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub messages: Vec<Vec<f64>>,
}

impl Profile {
    pub fn max_abs_diff(&self, other: &Profile) -> f64 {
        self.messages
            .iter()
            .zip(&other.messages)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxTerm {
    pub name: &'static str,
    pub link: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TaxBreakdown {
    pub terms: Vec<TaxTerm>,
}

impl TaxBreakdown {
    pub fn push(&mut self, name: &'static str, link: Option<usize>, value: f64) {
        self.terms.push(TaxTerm { name, link, value });
    }

    pub fn total(&self) -> f64 {
        self.terms.iter().map(|t| t.value).sum()
    }

    pub fn sum_named(&self, name: &str) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.name == name)
            .map(|t| t.value)
            .sum()
    }
}

/// What one agent receives and pays at a profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentOutcome {
    pub allocation: f64,
    /// Radial factor r_i; `+∞` when every f_i^l is zero.
    pub radial: f64,
    /// f_i^l for every link.
    pub loads: Vec<f64>,
    pub tax: TaxBreakdown,
    pub tax_total: f64,
    /// v_i(x̂_i), possibly −∞.
    pub value: f64,
    pub utility: f64,
    /// Set when the allocation is outside the valuation's domain.
    pub domain_violation: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("agent `{agent}`: unbounded radial factor with positive demand")]
    UnboundedRadial { agent: String },
    #[error("agent `{agent}` has no neighbor quoting a price for link `{link}`; use the extended (link-cover) mechanism")]
    EmptyPriceNeighborhood { agent: String, link: String },
    #[error("agent `{agent}`, link `{link}`: maximum attained with zero count")]
    DivisionGuard { agent: String, link: String },
    #[error("agent `{agent}`: message has {found} components, expected {expected}")]
    Shape {
        agent: String,
        expected: usize,
        found: usize,
    },
    #[error("agent `{agent}`: utility increases without bound along {coord}")]
    UnboundedResponse { agent: String, coord: String },
    #[error("no group leader for agent `{agent}` on link `{link}`")]
    MissingLeader { agent: String, link: String },
}

/// Common interface of the two mechanisms.
pub trait Mechanism {
    fn topology(&self) -> &Topology;
    fn protocol(&self) -> Protocol;
    /// Labels of agent i's message components in layout order.
    fn coords(&self, agent: usize) -> Vec<Coord>;
    fn dim(&self, agent: usize) -> usize;
    /// The closed-form component count for agent i.
    fn dimension_formula(&self, agent: usize) -> usize;
    /// All-zero messages, except strictly positive components set to 1.
    fn zero_profile(&self) -> Profile;
    fn outcome(&self, profile: &Profile, agent: usize) -> Result<AgentOutcome, MechanismError>;
    /// Analytic partial derivatives of û_i with respect to m_i.
    fn gradient(&self, profile: &Profile, agent: usize) -> Result<Vec<f64>, MechanismError>;
    /// The maximizer of û_i over m_i with the other messages fixed.
    fn best_response(&self, profile: &Profile, agent: usize) -> Result<Vec<f64>, MechanismError>;
    /// Per-unit price the agent quotes for itself, Σ_{l∈L_i} p_i^l
    /// (unicast) or Σ_{l∈L_i} p_i^{1,l} (multicast).
    fn own_price_sum(&self, profile: &Profile, agent: usize) -> f64;

    fn utility(&self, profile: &Profile, agent: usize) -> Result<f64, MechanismError> {
        Ok(self.outcome(profile, agent)?.utility)
    }

    fn check_shape(&self, profile: &Profile) -> Result<(), MechanismError> {
        let sets = &self.topology().sets;
        if profile.messages.len() != sets.n_agents() {
            return Err(MechanismError::Shape {
                agent: "<profile>".into(),
                expected: sets.n_agents(),
                found: profile.messages.len(),
            });
        }
        for (i, m) in profile.messages.iter().enumerate() {
            if m.len() != self.dim(i) {
                return Err(MechanismError::Shape {
                    agent: sets.agent_ids[i].clone(),
                    expected: self.dim(i),
                    found: m.len(),
                });
            }
        }
        Ok(())
    }

    fn outcomes(&self, profile: &Profile) -> Result<Vec<AgentOutcome>, MechanismError> {
        self.check_shape(profile)?;
        (0..self.topology().n_agents())
            .map(|i| self.outcome(profile, i))
            .collect()
    }
}

/// Either mechanism, chosen by the instance protocol.
#[derive(Debug, Clone)]
pub enum Game {
    Utp(Box<UtpGame>),
    Mmtp(Box<MmtpGame>),
}

impl Game {
    pub fn new(topology: Topology) -> Self {
        match topology.sets.protocol {
            Protocol::Utp => Game::Utp(Box::new(UtpGame::new(topology))),
            Protocol::Mmtp => Game::Mmtp(Box::new(MmtpGame::new(topology))),
        }
    }

    fn inner(&self) -> &dyn Mechanism {
        match self {
            Game::Utp(g) => g.as_ref(),
            Game::Mmtp(g) => g.as_ref(),
        }
    }
}

impl Mechanism for Game {
    fn topology(&self) -> &Topology {
        self.inner().topology()
    }
    fn protocol(&self) -> Protocol {
        self.inner().protocol()
    }
    fn coords(&self, agent: usize) -> Vec<Coord> {
        self.inner().coords(agent)
    }
    fn dim(&self, agent: usize) -> usize {
        self.inner().dim(agent)
    }
    fn dimension_formula(&self, agent: usize) -> usize {
        self.inner().dimension_formula(agent)
    }
    fn zero_profile(&self) -> Profile {
        self.inner().zero_profile()
    }
    fn outcome(&self, profile: &Profile, agent: usize) -> Result<AgentOutcome, MechanismError> {
        self.inner().outcome(profile, agent)
    }
    fn gradient(&self, profile: &Profile, agent: usize) -> Result<Vec<f64>, MechanismError> {
        self.inner().gradient(profile, agent)
    }
    fn best_response(&self, profile: &Profile, agent: usize) -> Result<Vec<f64>, MechanismError> {
        self.inner().best_response(profile, agent)
    }
    fn own_price_sum(&self, profile: &Profile, agent: usize) -> f64 {
        self.inner().own_price_sum(profile, agent)
    }
}

/// Per-agent and total message dimensions, enumerated and by formula.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionReport {
    pub per_agent: Vec<usize>,
    pub formula: Vec<usize>,
    pub total: usize,
    pub formula_total: usize,
}

impl DimensionReport {
    pub fn matches(&self) -> bool {
        self.per_agent == self.formula
    }
}

pub fn dimensions(game: &dyn Mechanism) -> DimensionReport {
    let n = game.topology().n_agents();
    let per_agent: Vec<usize> = (0..n).map(|i| game.coords(i).len()).collect();
    let formula: Vec<usize> = (0..n).map(|i| game.dimension_formula(i)).collect();
    DimensionReport {
        total: per_agent.iter().sum(),
        formula_total: formula.iter().sum(),
        per_agent,
        formula,
    }
}

/// Central-difference Hessian of û_i with respect to m_i.
pub fn own_hessian(
    game: &dyn Mechanism,
    profile: &Profile,
    agent: usize,
    h: f64,
) -> Result<Vec<Vec<f64>>, MechanismError> {
    let d = game.dim(agent);
    let mut p = profile.clone();
    let base = profile.messages[agent].clone();
    let eval = |p: &mut Profile, shifts: &[(usize, f64)]| {
        p.messages[agent].copy_from_slice(&base);
        for &(k, s) in shifts {
            p.messages[agent][k] += s;
        }
        game.utility(p, agent)
    };
    let mut hess = vec![vec![0.0; d]; d];
    let u0 = eval(&mut p, &[])?;
    for a in 0..d {
        let up = eval(&mut p, &[(a, h)])?;
        let um = eval(&mut p, &[(a, -h)])?;
        hess[a][a] = (up - 2.0 * u0 + um) / (h * h);
        for b in a + 1..d {
            let pp = eval(&mut p, &[(a, h), (b, h)])?;
            let pm = eval(&mut p, &[(a, h), (b, -h)])?;
            let mp = eval(&mut p, &[(a, -h), (b, h)])?;
            let mm = eval(&mut p, &[(a, -h), (b, -h)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[a][b] = v;
            hess[b][a] = v;
        }
    }
    Ok(hess)
}

/// Σ_{j∈N(i)} (y_j^l + Σ_{h∈N(j), h≠i} n_{j,h}^l): agent i's view of the
/// demand on link l from everyone but itself.
pub(crate) fn neighborhood_demand(
    dir: &NeighborDirectory,
    i: usize,
    l: usize,
    demand: impl Fn(usize, usize) -> f64,
    summary: impl Fn(usize, usize, usize) -> f64,
) -> f64 {
    let mut total = 0.0;
    for &j in &dir.neighbors[i] {
        total += demand(j, l);
        for &h in &dir.neighbors[j] {
            if h != i {
                total += summary(j, h, l);
            }
        }
    }
    total
}

/// Target of n_{i,j}^l: y_j^l + Σ_{h∈N(j), h≠i} n_{j,h}^l.
pub(crate) fn summary_target(
    dir: &NeighborDirectory,
    i: usize,
    j: usize,
    l: usize,
    demand: impl Fn(usize, usize) -> f64,
    summary: impl Fn(usize, usize, usize) -> f64,
) -> f64 {
    let mut t = demand(j, l);
    for &h in &dir.neighbors[j] {
        if h != i {
            t += summary(j, h, l);
        }
    }
    t
}

/// min_l c^l / f^l with c / 0 = +∞.
pub(crate) fn radial_factor(capacity: &[f64], f: &[f64]) -> f64 {
    capacity
        .iter()
        .zip(f)
        .map(|(&c, &fl)| if fl > 0.0 { c / fl } else { f64::INFINITY })
        .fold(f64::INFINITY, f64::min)
}

/// r·f, reading the product as 0 when r is infinite (then every f is 0).
pub(crate) fn scaled_load(r: f64, f: f64) -> f64 {
    if r.is_infinite() {
        0.0
    } else {
        r * f
    }
}

pub(crate) fn allocation(
    sets: &IndexSets,
    i: usize,
    r: f64,
    y: f64,
) -> Result<f64, MechanismError> {
    if r.is_infinite() {
        if y > 0.0 {
            return Err(MechanismError::UnboundedRadial {
                agent: sets.agent_ids[i].clone(),
            });
        }
        return Ok(0.0);
    }
    Ok(r * y)
}

pub(crate) fn value_and_flag(sets: &IndexSets, i: usize, x: f64) -> (f64, bool) {
    match sets.valuations[i].eval_extended(x) {
        Ok(v) if v.is_finite() => (v, false),
        Ok(v) => (v, true),
        Err(_) => (f64::NEG_INFINITY, true),
    }
}

/// ∂û/∂y = r (v′(r y) − P), with v′(0) taken as the right limit.
pub(crate) fn demand_gradient(sets: &IndexSets, i: usize, r: f64, x: f64, price: f64) -> f64 {
    if r.is_infinite() {
        return f64::INFINITY;
    }
    let v = &sets.valuations[i];
    let marginal = if x > 0.0 {
        v.grad(x).unwrap_or(f64::INFINITY)
    } else {
        v.grad_at_zero()
    };
    r * (marginal - price)
}

/// Best-response demand: y = (v′)^{-1}(P) / r.
pub(crate) fn demand_response(
    sets: &IndexSets,
    i: usize,
    r: f64,
    price: f64,
) -> Result<f64, MechanismError> {
    let unbounded = || MechanismError::UnboundedResponse {
        agent: sets.agent_ids[i].clone(),
        coord: "y".into(),
    };
    if r.is_infinite() || !(price > 0.0) {
        return Err(unbounded());
    }
    let x = sets.valuations[i]
        .grad_inverse(price)
        .map_err(|_| unbounded())?;
    Ok(x / r)
}

pub(crate) fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut c) = (0.0, 0usize);
    for v in values {
        s += v;
        c += 1;
    }
    (c > 0).then(|| s / c as f64)
}
