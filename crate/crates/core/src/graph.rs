//! The tree-shaped message-exchange network and its derived structures:
//! routing, proxy designation (φ), per-link neighborhoods, group leaders
//! and link covers.

use std::collections::{HashMap, VecDeque};

use rand::seq::IndexedRandom;
use rand::Rng;
use thiserror::Error;

use crate::instance::{IndexSets, MessageGraphSpec};

pub const NO_HOP: usize = usize::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("instance has no message_graph block")]
    Missing,
    #[error("edge references unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("self-loop on agent `{0}`")]
    SelfLoop(String),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(String, String),
    #[error(
        "message graph must have {expected} edges to be a tree on {nodes} agents, found {found}"
    )]
    EdgeCount {
        expected: usize,
        found: usize,
        nodes: usize,
    },
    #[error("message graph is not connected; agent `{0}` is unreachable")]
    Disconnected(String),
    #[error("phi override for `{agent}` points to `{target}`, which is not a neighbor")]
    PhiNotNeighbor { agent: String, target: String },
}

/// An undirected spanning tree over the agents. Adjacency lists are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageTree {
    adj: Vec<Vec<usize>>,
}

impl MessageTree {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let name = |i: usize| i.to_string();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n {
                return Err(GraphError::UnknownAgent(name(a)));
            }
            if b >= n {
                return Err(GraphError::UnknownAgent(name(b)));
            }
            if a == b {
                return Err(GraphError::SelfLoop(name(a)));
            }
            if adj[a].contains(&b) {
                return Err(GraphError::DuplicateEdge(name(a), name(b)));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        if edges.len() + 1 != n {
            return Err(GraphError::EdgeCount {
                expected: n.saturating_sub(1),
                found: edges.len(),
                nodes: n,
            });
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let tree = Self { adj };
        let seen = tree.reachable_from(0);
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(GraphError::Disconnected(name(i)));
        }
        Ok(tree)
    }

    /// Builds the tree from an instance's `message_graph` block.
    pub fn from_spec(spec: &MessageGraphSpec, sets: &IndexSets) -> Result<Self, GraphError> {
        let mut edges = Vec::with_capacity(spec.edges.len());
        for [a, b] in &spec.edges {
            let ia = sets
                .agent_index(a)
                .ok_or_else(|| GraphError::UnknownAgent(a.clone()))?;
            let ib = sets
                .agent_index(b)
                .ok_or_else(|| GraphError::UnknownAgent(b.clone()))?;
            edges.push((ia, ib));
        }
        Self::new(sets.n_agents(), &edges).map_err(|e| rename(e, sets))
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, list) in self.adj.iter().enumerate() {
            for &b in list {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n_nodes()];
        if self.n_nodes() == 0 {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Nodes on the unique path from `a` to `b`, inclusive.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let parent = self.bfs_parents(a);
        let mut out = vec![b];
        let mut cur = b;
        while cur != a {
            cur = parent[cur];
            out.push(cur);
        }
        out.reverse();
        out
    }

    fn bfs_parents(&self, root: usize) -> Vec<usize> {
        let mut parent = vec![NO_HOP; self.n_nodes()];
        parent[root] = root;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if parent[v] == NO_HOP {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        parent
    }

    /// Whether the subgraph induced by `members` is connected.
    pub fn induces_connected(&self, members: &[bool]) -> bool {
        let Some(start) = members.iter().position(|&m| m) else {
            return true;
        };
        let mut seen = vec![false; self.n_nodes()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if members[v] && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == members.iter().filter(|&&m| m).count()
    }
}

fn rename(err: GraphError, sets: &IndexSets) -> GraphError {
    let id = |s: &str| {
        s.parse::<usize>()
            .ok()
            .and_then(|i| sets.agent_ids.get(i).cloned())
            .unwrap_or_else(|| s.to_owned())
    };
    match err {
        GraphError::SelfLoop(a) => GraphError::SelfLoop(id(&a)),
        GraphError::DuplicateEdge(a, b) => GraphError::DuplicateEdge(id(&a), id(&b)),
        GraphError::Disconnected(a) => GraphError::Disconnected(id(&a)),
        other => other,
    }
}

/// Neighborhood structures for every agent.
#[derive(Debug, Clone)]
pub struct NeighborDirectory {
    /// N(i), sorted.
    pub neighbors: Vec<Vec<usize>>,
    /// `next_hop[i][j]` = n(i, j); [`NO_HOP`] on the diagonal.
    pub next_hop: Vec<Vec<usize>>,
    /// φ(i).
    pub phi: Vec<usize>,
    /// I_i = {h ∈ N(i) : φ(h) = i}, sorted.
    pub proxied: Vec<Vec<usize>>,
    /// N^l(i) indexed `[i][l]`. Restricted to N(i) ∩ N^l, or to
    /// N(i) ∩ N̂^l once a cover has been applied.
    pub link_neighbors: Vec<Vec<Vec<usize>>>,
}

impl NeighborDirectory {
    /// Agents h ≠ i with n(i, h) = j.
    pub fn behind(&self, i: usize, j: usize) -> Vec<usize> {
        (0..self.next_hop.len())
            .filter(|&h| h != i && self.next_hop[i][h] == j)
            .collect()
    }

    /// Recomputes N^l(i) as N(i) ∩ N̂^l for links the agent uses or relays.
    pub fn apply_cover(&mut self, sets: &IndexSets, cover: &LinkCover) {
        for i in 0..self.neighbors.len() {
            for l in 0..sets.n_links() {
                self.link_neighbors[i][l] = self.neighbors[i]
                    .iter()
                    .copied()
                    .filter(|&j| cover.members[l][j])
                    .collect();
            }
        }
    }
}

/// Builds routing tables and proxy sets. The default φ(i) is the neighbor
/// with the smallest id; `phi_override` replaces individual entries.
pub fn build_neighbor_directory(
    tree: &MessageTree,
    sets: &IndexSets,
    phi_override: Option<&HashMap<usize, usize>>,
) -> Result<NeighborDirectory, GraphError> {
    let n = tree.n_nodes();
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| tree.neighbors(i).to_vec()).collect();
    let mut next_hop = vec![vec![NO_HOP; n]; n];
    for (i, row) in next_hop.iter_mut().enumerate() {
        let parent = tree.bfs_parents(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut cur = j;
            while parent[cur] != i {
                cur = parent[cur];
            }
            row[j] = cur;
        }
    }
    let mut phi: Vec<usize> = neighbors
        .iter()
        .map(|nb| nb.first().copied().unwrap_or(NO_HOP))
        .collect();
    if let Some(over) = phi_override {
        for (&i, &target) in over {
            if !tree.adjacent(i, target) {
                return Err(GraphError::PhiNotNeighbor {
                    agent: sets.agent_ids[i].clone(),
                    target: sets.agent_ids[target].clone(),
                });
            }
            phi[i] = target;
        }
    }
    let proxied = (0..n)
        .map(|i| {
            neighbors[i]
                .iter()
                .copied()
                .filter(|&h| phi[h] == i)
                .collect()
        })
        .collect();
    let link_neighbors = (0..n)
        .map(|i| {
            (0..sets.n_links())
                .map(|l| {
                    neighbors[i]
                        .iter()
                        .copied()
                        .filter(|&j| sets.uses[j][l])
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(NeighborDirectory {
        neighbors,
        next_hop,
        phi,
        proxied,
        link_neighbors,
    })
}

/// Resolves a `phi` map of ids into indices.
pub fn phi_override_from_spec(
    spec: &MessageGraphSpec,
    sets: &IndexSets,
) -> Result<HashMap<usize, usize>, GraphError> {
    let mut out = HashMap::new();
    if let Some(phi) = &spec.phi {
        for (a, b) in phi {
            let ia = sets
                .agent_index(a)
                .ok_or_else(|| GraphError::UnknownAgent(a.clone()))?;
            let ib = sets
                .agent_index(b)
                .ok_or_else(|| GraphError::UnknownAgent(b.clone()))?;
            out.insert(ia, ib);
        }
    }
    Ok(out)
}

/// Per-link verdict: whether the users of the link induce a connected
/// subgraph of the tree.
pub fn link_users_connected(tree: &MessageTree, sets: &IndexSets) -> Vec<bool> {
    (0..sets.n_links())
        .map(|l| {
            let members: Vec<bool> = (0..sets.n_agents()).map(|i| sets.uses[i][l]).collect();
            tree.induces_connected(&members)
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct LeaderAssignment {
    /// c(k, l) indexed `[k][l]`; `None` when G_k^l is empty or no member
    /// is adjacent to all others.
    pub leader: Vec<Vec<Option<usize>>>,
    /// C_i, sorted link indices.
    pub leads: Vec<Vec<usize>>,
    /// (group, link) pairs with no admissible leader.
    pub violations: Vec<(usize, usize)>,
}

impl LeaderAssignment {
    pub fn leader_of(&self, sets: &IndexSets, i: usize, l: usize) -> Option<usize> {
        sets.group_of[i].and_then(|k| self.leader[k][l])
    }

    pub fn is_leader(&self, i: usize, l: usize) -> bool {
        self.leads[i].binary_search(&l).is_ok()
    }
}

fn leader_candidates(tree: &MessageTree, members: &[usize]) -> Vec<usize> {
    members
        .iter()
        .copied()
        .filter(|&c| members.iter().all(|&j| j == c || tree.adjacent(c, j)))
        .collect()
}

fn finish_leaders(
    sets: &IndexSets,
    pick: impl Fn(&[usize]) -> usize,
    tree: &MessageTree,
) -> LeaderAssignment {
    let (ng, nl, n) = (sets.n_groups(), sets.n_links(), sets.n_agents());
    let mut leader = vec![vec![None; nl]; ng];
    let mut leads = vec![Vec::new(); n];
    let mut violations = Vec::new();
    for k in 0..ng {
        for l in 0..nl {
            let members = &sets.group_link_members[k][l];
            if members.is_empty() {
                continue;
            }
            let cands = leader_candidates(tree, members);
            if cands.is_empty() {
                violations.push((k, l));
            } else {
                let c = pick(&cands);
                leader[k][l] = Some(c);
                leads[c].push(l);
            }
        }
    }
    LeaderAssignment {
        leader,
        leads,
        violations,
    }
}

/// Chooses c(k, l) for every non-empty G_k^l, preferring the smallest id
/// among members adjacent to all other members.
pub fn assign_group_leaders(tree: &MessageTree, sets: &IndexSets) -> LeaderAssignment {
    finish_leaders(sets, |c| c[0], tree)
}

/// Like [`assign_group_leaders`] but breaks ties uniformly at random.
pub fn assign_group_leaders_with<R: Rng>(
    tree: &MessageTree,
    sets: &IndexSets,
    rng: &mut R,
) -> LeaderAssignment {
    let (ng, nl) = (sets.n_groups(), sets.n_links());
    let mut choice = vec![vec![None; nl]; ng];
    for (k, row) in choice.iter_mut().enumerate() {
        for (l, slot) in row.iter_mut().enumerate() {
            let cands = leader_candidates(tree, &sets.group_link_members[k][l]);
            *slot = cands.choose(rng).copied();
        }
    }
    let mut out = assign_group_leaders(tree, sets);
    let mut leads = vec![Vec::new(); sets.n_agents()];
    for k in 0..ng {
        for l in 0..nl {
            if let Some(c) = choice[k][l] {
                out.leader[k][l] = Some(c);
                leads[c].push(l);
            }
        }
    }
    for list in &mut leads {
        list.sort_unstable();
    }
    out.leads = leads;
    out
}

/// Minimal connected subtrees spanning each link's users.
#[derive(Debug, Clone)]
pub struct LinkCover {
    /// `members[l][i]` iff i ∈ N̂^l.
    pub members: Vec<Vec<bool>>,
    /// L̂_i = {l ∉ L_i : i ∈ N̂^l}, sorted.
    pub relay_links: Vec<Vec<usize>>,
}

impl LinkCover {
    pub fn is_trivial(&self) -> bool {
        self.relay_links.iter().all(Vec::is_empty)
    }
}

/// Marks the tree paths from every user of a link to one anchor user. On a
/// tree this union is the unique minimal connected superset of the users.
pub fn build_link_covers(tree: &MessageTree, sets: &IndexSets) -> LinkCover {
    let (n, nl) = (sets.n_agents(), sets.n_links());
    let mut members = vec![vec![false; n]; nl];
    for l in 0..nl {
        let users = &sets.link_users[l];
        let Some(&anchor) = users.first() else {
            continue;
        };
        let parent = tree.bfs_parents(anchor);
        for &u in users {
            let mut cur = u;
            members[l][cur] = true;
            while cur != anchor {
                cur = parent[cur];
                members[l][cur] = true;
            }
        }
    }
    let relay_links = (0..n)
        .map(|i| {
            (0..nl)
                .filter(|&l| members[l][i] && !sets.uses[i][l])
                .collect()
        })
        .collect();
    LinkCover {
        members,
        relay_links,
    }
}
