//! Random and structured instance generators for experiments and tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::instance::{AgentSpec, LinkSpec, MessageGraphSpec, ProblemInstance, Protocol};
use crate::valuation::{Family, ValuationSpec};

fn agent_id(i: usize) -> String {
    (i + 1).to_string()
}

fn link_id(l: usize) -> String {
    format!("l{}", l + 1)
}

fn group_id(k: usize) -> String {
    format!("g{}", k + 1)
}

/// A random valuation from one of the three families.
pub fn random_valuation<R: Rng>(rng: &mut R) -> ValuationSpec {
    match rng.random_range(0..3) {
        0 => ValuationSpec {
            family: Family::ScaledLog,
            a: rng.random_range(0.5..3.0),
            alpha: None,
        },
        1 => ValuationSpec {
            family: Family::ShiftedLog,
            a: rng.random_range(0.5..3.0),
            alpha: None,
        },
        _ => ValuationSpec {
            family: Family::Power,
            a: rng.random_range(0.5..2.0),
            alpha: Some(rng.random_range(0.3..0.8)),
        },
    }
}

/// Uniform random tree by attaching each node to an earlier one.
fn random_tree<R: Rng>(rng: &mut R, n: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (1..n)
        .map(|k| (order[rng.random_range(0..k)], order[k]))
        .collect()
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    adj
}

/// Grows a random connected vertex set of the given size from `start`.
fn grow_connected<R: Rng>(rng: &mut R, adj: &[Vec<usize>], start: usize, size: usize) -> Vec<bool> {
    let mut inside = vec![false; adj.len()];
    inside[start] = true;
    let mut count = 1;
    while count < size {
        let frontier: Vec<usize> = (0..adj.len())
            .filter(|&v| !inside[v] && adj[v].iter().any(|&u| inside[u]))
            .collect();
        let Some(&v) = frontier.choose(rng) else {
            break;
        };
        inside[v] = true;
        count += 1;
    }
    inside
}

fn assemble(
    protocol: Protocol,
    capacities: Vec<f64>,
    routes: Vec<Vec<usize>>,
    groups: Option<Vec<usize>>,
    valuations: Vec<ValuationSpec>,
    edges: &[(usize, usize)],
) -> ProblemInstance {
    ProblemInstance {
        protocol,
        links: capacities
            .iter()
            .enumerate()
            .map(|(l, &c)| LinkSpec {
                id: link_id(l),
                capacity: c,
            })
            .collect(),
        agents: routes
            .into_iter()
            .zip(valuations)
            .enumerate()
            .map(|(i, (route, valuation))| AgentSpec {
                id: agent_id(i),
                group: groups.as_ref().map(|g| group_id(g[i])),
                links: route.into_iter().map(link_id).collect(),
                valuation,
            })
            .collect(),
        message_graph: Some(MessageGraphSpec {
            edges: edges
                .iter()
                .map(|&(a, b)| [agent_id(a), agent_id(b)])
                .collect(),
            phi: None,
        }),
    }
}

fn routes_from_members(n: usize, members: &[Vec<bool>]) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| (0..members.len()).filter(|&l| members[l][i]).collect())
        .collect()
}

/// Gives every link-less agent a link of an adjacent agent, walking out
/// from covered agents so connectivity of each user set is preserved.
fn cover_everyone<R: Rng>(rng: &mut R, adj: &[Vec<usize>], members: &mut [Vec<bool>]) {
    let n = adj.len();
    loop {
        let covered = |i: usize, m: &[Vec<bool>]| m.iter().any(|row| row[i]);
        let pending: Vec<(usize, usize)> = (0..n)
            .filter(|&i| !covered(i, members))
            .filter_map(|i| {
                adj[i]
                    .iter()
                    .copied()
                    .find(|&j| covered(j, members))
                    .map(|j| (i, j))
            })
            .collect();
        if pending.is_empty() {
            return;
        }
        for (i, j) in pending {
            let links: Vec<usize> = (0..members.len()).filter(|&l| members[l][j]).collect();
            let &l = links.choose(rng).expect("covered agent has a link");
            members[l][i] = true;
        }
    }
}

/// Random unicast instance with `n` agents and `n_links` links on a random
/// tree; every link's users are connected in the tree and number at least
/// two.
pub fn random_utp_instance<R: Rng>(rng: &mut R, n: usize, n_links: usize) -> ProblemInstance {
    assert!(n >= 2 && n_links >= 1);
    let edges = random_tree(rng, n);
    let adj = adjacency(n, &edges);
    let mut members: Vec<Vec<bool>> = (0..n_links)
        .map(|_| {
            let size = rng.random_range(2..=n);
            let start = rng.random_range(0..n);
            grow_connected(rng, &adj, start, size)
        })
        .collect();
    cover_everyone(rng, &adj, &mut members);
    let capacities = (0..n_links).map(|_| rng.random_range(0.5..2.0)).collect();
    let valuations = (0..n).map(|_| random_valuation(rng)).collect();
    assemble(
        Protocol::Utp,
        capacities,
        routes_from_members(n, &members),
        None,
        valuations,
        &edges,
    )
}

/// Group layout shared by the multicast generators: group centers form a
/// path, members hang off their center as leaves.
struct GroupForest {
    n: usize,
    group_of: Vec<usize>,
    centers: Vec<usize>,
    leaves: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

fn group_forest(sizes: &[usize]) -> GroupForest {
    let mut group_of = Vec::new();
    let mut centers = Vec::new();
    let mut leaves = Vec::new();
    let mut edges = Vec::new();
    for (k, &size) in sizes.iter().enumerate() {
        let c = group_of.len();
        group_of.push(k);
        if let Some(&prev) = centers.last() {
            edges.push((prev, c));
        }
        centers.push(c);
        let mut ls = Vec::new();
        for _ in 1..size {
            let v = group_of.len();
            group_of.push(k);
            edges.push((c, v));
            ls.push(v);
        }
        leaves.push(ls);
    }
    GroupForest {
        n: group_of.len(),
        group_of,
        centers,
        leaves,
        edges,
    }
}

fn mmtp_members<R: Rng>(rng: &mut R, f: &GroupForest, groups_on: &[usize]) -> Vec<bool> {
    let mut row = vec![false; f.n];
    for &k in groups_on {
        row[f.centers[k]] = true;
        for &v in &f.leaves[k] {
            if rng.random_bool(0.6) {
                row[v] = true;
            }
        }
    }
    row
}

/// Random multicast instance with `n_groups` groups of 1–3 members and
/// `n_links` links. Each link is shared by a contiguous run of at least two
/// groups, and each G_k^l contains its group center, so both standing
/// assumptions hold.
pub fn random_mmtp_instance<R: Rng>(
    rng: &mut R,
    n_groups: usize,
    n_links: usize,
    max_agents: usize,
) -> ProblemInstance {
    assert!(n_groups >= 2 && n_links >= 1 && max_agents >= n_groups);
    let mut sizes = vec![1; n_groups];
    let mut budget = max_agents - n_groups;
    for s in sizes.iter_mut() {
        let extra = rng.random_range(0..=budget.min(2));
        *s += extra;
        budget -= extra;
    }
    let f = group_forest(&sizes);
    let mut members: Vec<Vec<bool>> = (0..n_links)
        .map(|_| {
            let len = rng.random_range(2..=n_groups);
            let start = rng.random_range(0..=n_groups - len);
            let run: Vec<usize> = (start..start + len).collect();
            mmtp_members(rng, &f, &run)
        })
        .collect();
    // Every group center needs a link; extend a link's run to reach it.
    for k in 0..n_groups {
        if !members.iter().any(|row| row[f.centers[k]]) {
            let l = rng.random_range(0..n_links);
            let lo = (0..n_groups).find(|&g| members[l][f.centers[g]]).unwrap();
            let hi = (0..n_groups)
                .rev()
                .find(|&g| members[l][f.centers[g]])
                .unwrap();
            let run: Vec<usize> = (k.min(lo)..=k.max(hi)).collect();
            for g in run {
                members[l][f.centers[g]] = true;
            }
        }
    }
    for k in 0..n_groups {
        for &v in &f.leaves[k] {
            if !members.iter().any(|row| row[v]) {
                let links: Vec<usize> =
                    (0..n_links).filter(|&l| members[l][f.centers[k]]).collect();
                members[*links.choose(rng).unwrap()][v] = true;
            }
        }
    }
    let capacities = (0..n_links).map(|_| rng.random_range(0.5..2.0)).collect();
    let valuations = (0..f.n).map(|_| random_valuation(rng)).collect();
    assemble(
        Protocol::Mmtp,
        capacities,
        routes_from_members(f.n, &members),
        Some(f.group_of.clone()),
        valuations,
        &f.edges,
    )
}

/// Unicast instance whose link `l1` is used by two non-adjacent agents
/// only, so its users are disconnected in the message tree.
pub fn disconnected_utp_instance<R: Rng>(rng: &mut R, n: usize, n_links: usize) -> ProblemInstance {
    assert!(n >= 3 && n_links >= 2);
    loop {
        let edges = random_tree(rng, n);
        let adj = adjacency(n, &edges);
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| !adj[a].contains(&b))
            .collect();
        let Some(&(a, b)) = pairs.choose(rng) else {
            continue;
        };
        let mut first = vec![false; n];
        first[a] = true;
        first[b] = true;
        let mut members = vec![first];
        for _ in 1..n_links {
            let size = rng.random_range(2..=n);
            let start = rng.random_range(0..n);
            members.push(grow_connected(rng, &adj, start, size));
        }
        let mut rest = members.split_off(1);
        cover_everyone(rng, &adj, &mut rest);
        members.extend(rest);
        // Agents reachable only through the disconnected link still need a
        // connected link of their own.
        if (0..n).any(|i| !members[1..].iter().any(|row| row[i])) {
            continue;
        }
        let capacities = (0..n_links).map(|_| rng.random_range(0.5..2.0)).collect();
        let valuations = (0..n).map(|_| random_valuation(rng)).collect();
        return assemble(
            Protocol::Utp,
            capacities,
            routes_from_members(n, &members),
            None,
            valuations,
            &edges,
        );
    }
}

/// Multicast instance with three groups whose centers form a path; link
/// `l1` is shared by the two outer groups only, so the middle center must
/// relay it.
pub fn disconnected_mmtp_instance<R: Rng>(rng: &mut R) -> ProblemInstance {
    let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(1..=2)).collect();
    let f = group_forest(&sizes);
    let members = vec![
        mmtp_members(rng, &f, &[0, 2]),
        mmtp_members(rng, &f, &[0, 1, 2]),
    ];
    let mut members = members;
    for k in 0..3 {
        for &v in &f.leaves[k] {
            members[1][v] = true;
        }
    }
    let capacities = (0..2).map(|_| rng.random_range(0.5..2.0)).collect();
    let valuations = (0..f.n).map(|_| random_valuation(rng)).collect();
    assemble(
        Protocol::Mmtp,
        capacities,
        routes_from_members(f.n, &members),
        Some(f.group_of.clone()),
        valuations,
        &f.edges,
    )
}

/// Path of `n` agents sharing two links, with scaled-log valuations. In the
/// multicast form adjacent pairs form groups. Every per-agent quantity in
/// the dimension formula is bounded, so totals grow linearly in `n`.
pub fn path_family(protocol: Protocol, n: usize) -> ProblemInstance {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let routes = vec![vec![0, 1]; n];
    let groups = (protocol == Protocol::Mmtp).then(|| (0..n).map(|i| i / 2).collect());
    let valuations = (0..n)
        .map(|i| ValuationSpec {
            family: Family::ScaledLog,
            a: 1.0 + (i % 3) as f64,
            alpha: None,
        })
        .collect();
    assemble(protocol, vec![1.0, 2.0], routes, groups, valuations, &edges)
}

/// Three agents on one unit link with v_i = i·ln x, connected as the path
/// 2–1–3. The efficient rates are (1/6, 1/3, 1/2) with link price 6.
pub fn three_agent_example() -> ProblemInstance {
    let valuations = (1..=3)
        .map(|a| ValuationSpec {
            family: Family::ScaledLog,
            a: a as f64,
            alpha: None,
        })
        .collect();
    assemble(
        Protocol::Utp,
        vec![1.0],
        vec![vec![0]; 3],
        None,
        valuations,
        &[(1, 0), (0, 2)],
    )
}
