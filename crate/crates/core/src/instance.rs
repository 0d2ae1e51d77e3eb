//! Problem instances: links, agents, routes, groups and valuations.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::valuation::{Valuation, ValuationError, ValuationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Utp,
    Mmtp,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Utp => "utp",
            Protocol::Mmtp => "mmtp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub links: Vec<String>,
    pub valuation: ValuationSpec,
}

/// The `message_graph` block of an instance file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageGraphSpec {
    pub edges: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub protocol: Protocol,
    pub links: Vec<LinkSpec>,
    pub agents: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_graph: Option<MessageGraphSpec>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("agent `{0}` has an empty route")]
    EmptyRoute(String),
    #[error("agent `{agent}` lists link `{link}` more than once")]
    RepeatedLink { agent: String, link: String },
    #[error("agent `{agent}` uses unknown link `{link}`")]
    UnknownLink { agent: String, link: String },
    #[error("link `{link}` has non-positive capacity {capacity}")]
    NonPositiveCapacity { link: String, capacity: f64 },
    #[error("agent `{0}` has no group but the protocol is mmtp")]
    MissingGroup(String),
    #[error("agent `{agent}`: {source}")]
    Valuation {
        agent: String,
        #[source]
        source: ValuationError,
    },
    #[error("instance has no {0}")]
    Empty(&'static str),
}

/// Which standing assumption on the instance is violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionKind {
    /// Every link needs at least two users (N^l >= 2).
    UsersPerLink,
    /// Every link needs at least two groups (K^l >= 2).
    GroupsPerLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: AssumptionKind,
    pub link: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares ids so that embedded digit runs order numerically
/// (`a2 < a10`), falling back to byte order for ties.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (ab, bb) = (a.as_bytes(), b.as_bytes());
    let (mut i, mut j) = (0, 0);
    while i < ab.len() && j < bb.len() {
        if ab[i].is_ascii_digit() && bb[j].is_ascii_digit() {
            let si = i;
            while i < ab.len() && ab[i].is_ascii_digit() {
                i += 1;
            }
            let sj = j;
            while j < bb.len() && bb[j].is_ascii_digit() {
                j += 1;
            }
            let da = trim_zeros(&a[si..i]);
            let db = trim_zeros(&b[sj..j]);
            let ord = da.len().cmp(&db.len()).then_with(|| da.cmp(db));
            if ord != Ordering::Equal {
                return ord;
            }
        } else {
            let ord = ab[i].cmp(&bb[j]);
            if ord != Ordering::Equal {
                return ord;
            }
            i += 1;
            j += 1;
        }
    }
    (ab.len() - i).cmp(&(bb.len() - j)).then_with(|| a.cmp(b))
}

fn trim_zeros(s: &str) -> &str {
    let t = s.trim_start_matches('0');
    if t.is_empty() {
        "0"
    } else {
        t
    }
}

fn sorted_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = ids.map(str::to_owned).collect();
    v.sort_by(|a, b| natural_cmp(a, b));
    v
}

/// Dense index structures derived once from an instance. Agents, links and
/// groups are indexed in natural id order.
#[derive(Debug, Clone)]
pub struct IndexSets {
    pub protocol: Protocol,
    pub agent_ids: Vec<String>,
    pub link_ids: Vec<String>,
    pub group_ids: Vec<String>,
    pub capacity: Vec<f64>,
    pub valuations: Vec<Valuation>,
    /// L_i, sorted.
    pub routes: Vec<Vec<usize>>,
    /// `uses[i][l]` iff l ∈ L_i.
    pub uses: Vec<Vec<bool>>,
    /// N^l, sorted.
    pub link_users: Vec<Vec<usize>>,
    /// k(i); `None` for unicast instances.
    pub group_of: Vec<Option<usize>>,
    pub group_members: Vec<Vec<usize>>,
    /// K^l, sorted.
    pub link_groups: Vec<Vec<usize>>,
    /// G_k^l indexed `[k][l]`, sorted.
    pub group_link_members: Vec<Vec<Vec<usize>>>,
    agent_index: HashMap<String, usize>,
    link_index: HashMap<String, usize>,
}

impl IndexSets {
    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn n_links(&self) -> usize {
        self.link_ids.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_ids.len()
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agent_index.get(id).copied()
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    pub fn c_max(&self) -> f64 {
        self.capacity.iter().cloned().fold(0.0, f64::max)
    }

    pub fn c_min(&self) -> f64 {
        self.capacity.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Per-link load of a rate vector: a sum over users for unicast, a sum
    /// of per-group maxima for multicast.
    pub fn link_loads(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_links())
            .map(|l| match self.protocol {
                Protocol::Utp => self.link_users[l].iter().map(|&i| x[i]).sum(),
                Protocol::Mmtp => self.link_groups[l]
                    .iter()
                    .map(|&k| {
                        self.group_link_members[k][l]
                            .iter()
                            .map(|&i| x[i])
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .sum(),
            })
            .collect()
    }

    /// Objective Σ v_i(x_i), −∞ if some rate is outside its domain.
    pub fn welfare(&self, x: &[f64]) -> f64 {
        self.valuations
            .iter()
            .zip(x)
            .map(|(v, &xi)| v.eval_extended(xi).unwrap_or(f64::NEG_INFINITY))
            .sum()
    }
}

/// Parses an instance document, reporting the position of syntax errors.
pub fn parse_instance(text: &str) -> Result<ProblemInstance, InstanceError> {
    serde_json::from_str(text).map_err(|e| InstanceError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Builds the dense index sets, rejecting structurally broken instances.
pub fn derive_index_sets(instance: &ProblemInstance) -> Result<IndexSets, InstanceError> {
    if instance.links.is_empty() {
        return Err(InstanceError::Empty("links"));
    }
    if instance.agents.is_empty() {
        return Err(InstanceError::Empty("agents"));
    }
    let mut seen = HashSet::new();
    for link in &instance.links {
        if !seen.insert(link.id.as_str()) {
            return Err(InstanceError::DuplicateId {
                kind: "link",
                id: link.id.clone(),
            });
        }
        if !(link.capacity > 0.0 && link.capacity.is_finite()) {
            return Err(InstanceError::NonPositiveCapacity {
                link: link.id.clone(),
                capacity: link.capacity,
            });
        }
    }
    let mut seen = HashSet::new();
    for agent in &instance.agents {
        if !seen.insert(agent.id.as_str()) {
            return Err(InstanceError::DuplicateId {
                kind: "agent",
                id: agent.id.clone(),
            });
        }
    }

    let link_ids = sorted_ids(instance.links.iter().map(|l| l.id.as_str()));
    let agent_ids = sorted_ids(instance.agents.iter().map(|a| a.id.as_str()));
    let link_index: HashMap<String, usize> = link_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.clone(), k))
        .collect();
    let agent_index: HashMap<String, usize> = agent_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.clone(), k))
        .collect();
    let n = agent_ids.len();
    let nl = link_ids.len();

    let mut capacity = vec![0.0; nl];
    for link in &instance.links {
        capacity[link_index[&link.id]] = link.capacity;
    }

    let multicast = instance.protocol == Protocol::Mmtp;
    let group_ids = if multicast {
        let mut ids = HashSet::new();
        for agent in &instance.agents {
            match &agent.group {
                Some(g) => {
                    ids.insert(g.as_str());
                }
                None => return Err(InstanceError::MissingGroup(agent.id.clone())),
            }
        }
        sorted_ids(ids.into_iter())
    } else {
        Vec::new()
    };
    let group_index: HashMap<&str, usize> = group_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();

    let mut routes = vec![Vec::new(); n];
    let mut valuations = vec![Valuation::scaled_log(1.0); n];
    let mut group_of = vec![None; n];
    for agent in &instance.agents {
        let i = agent_index[&agent.id];
        if agent.links.is_empty() {
            return Err(InstanceError::EmptyRoute(agent.id.clone()));
        }
        let mut route = Vec::with_capacity(agent.links.len());
        for lid in &agent.links {
            let l = *link_index
                .get(lid)
                .ok_or_else(|| InstanceError::UnknownLink {
                    agent: agent.id.clone(),
                    link: lid.clone(),
                })?;
            if route.contains(&l) {
                return Err(InstanceError::RepeatedLink {
                    agent: agent.id.clone(),
                    link: lid.clone(),
                });
            }
            route.push(l);
        }
        route.sort_unstable();
        routes[i] = route;
        valuations[i] =
            Valuation::new(&agent.valuation).map_err(|source| InstanceError::Valuation {
                agent: agent.id.clone(),
                source,
            })?;
        if multicast {
            group_of[i] = agent.group.as_deref().map(|g| group_index[g]);
        }
    }

    let mut uses = vec![vec![false; nl]; n];
    let mut link_users = vec![Vec::new(); nl];
    for (i, route) in routes.iter().enumerate() {
        for &l in route {
            uses[i][l] = true;
            link_users[l].push(i);
        }
    }
    let ng = group_ids.len();
    let mut group_members = vec![Vec::new(); ng];
    let mut group_link_members = vec![vec![Vec::new(); nl]; ng];
    for i in 0..n {
        if let Some(k) = group_of[i] {
            group_members[k].push(i);
            for &l in &routes[i] {
                group_link_members[k][l].push(i);
            }
        }
    }
    let link_groups = (0..nl)
        .map(|l| {
            (0..ng)
                .filter(|&k| !group_link_members[k][l].is_empty())
                .collect()
        })
        .collect();

    Ok(IndexSets {
        protocol: instance.protocol,
        agent_ids,
        link_ids,
        group_ids,
        capacity,
        valuations,
        routes,
        uses,
        link_users,
        group_of,
        group_members,
        link_groups,
        group_link_members,
        agent_index,
        link_index,
    })
}

/// Checks the per-link competition assumptions. Structural problems are
/// returned as errors; assumption failures are listed in the report.
pub fn validate_instance(instance: &ProblemInstance) -> Result<ValidationReport, InstanceError> {
    let sets = derive_index_sets(instance)?;
    let mut violations = Vec::new();
    for l in 0..sets.n_links() {
        let users = sets.link_users[l].len();
        if users < 2 {
            violations.push(Violation {
                kind: AssumptionKind::UsersPerLink,
                link: sets.link_ids[l].clone(),
                message: format!(
                    "link `{}` has {users} user(s); N^l >= 2 is required",
                    sets.link_ids[l]
                ),
            });
        }
        if sets.protocol == Protocol::Mmtp {
            let groups = sets.link_groups[l].len();
            if groups < 2 {
                violations.push(Violation {
                    kind: AssumptionKind::GroupsPerLink,
                    link: sets.link_ids[l].clone(),
                    message: format!(
                        "link `{}` is used by {groups} group(s); K^l >= 2 is required",
                        sets.link_ids[l]
                    ),
                });
            }
        }
    }
    Ok(ValidationReport { violations })
}
