//! Builds an equilibrium profile from a certified oracle solution.

use crate::instance::{IndexSets, Protocol};
use crate::mechanism::{Coord, Mechanism, Profile, Topology};
use crate::oracle::CentralSolution;

use super::EquilibriumError;

/// Oracle rates closer than this (times c_max) to their group maximum are
/// moved onto it, so equal demands compare exactly equal.
const SNAP_TOL: f64 = 1e-8;

/// Multicast solution cleaned up for construction.
struct GroupSolution {
    x: Vec<f64>,
    /// μ_i^l, zero off-route.
    mu: Vec<Vec<f64>>,
    /// max_{G_k^l} x, `[k][l]`.
    top: Vec<Vec<f64>>,
    /// Number of members of G_k^l at the maximum.
    count: Vec<Vec<usize>>,
}

fn snap_groups(sets: &IndexSets, sol: &CentralSolution) -> GroupSolution {
    let tol = SNAP_TOL * sets.c_max();
    let mut x = sol.x.clone();
    for members in &sets.group_members {
        let mut order = members.clone();
        order.sort_by(|&a, &b| x[b].total_cmp(&x[a]));
        let mut head = f64::NAN;
        for &i in &order {
            if head - x[i] <= tol {
                x[i] = head;
            } else {
                head = x[i];
            }
        }
    }
    let (ng, nl) = (sets.n_groups(), sets.n_links());
    let mut top = vec![vec![0.0; nl]; ng];
    let mut count = vec![vec![0; nl]; ng];
    let mut mu: Vec<Vec<f64>> = (0..sets.n_agents())
        .map(|i| (0..nl).map(|l| sol.mu[i][l].unwrap_or(0.0)).collect())
        .collect();
    for k in 0..ng {
        for l in 0..nl {
            let members = &sets.group_link_members[k][l];
            if members.is_empty() {
                continue;
            }
            let b = members.iter().map(|&i| x[i]).fold(0.0, f64::max);
            let attains: Vec<usize> = members.iter().copied().filter(|&i| x[i] == b).collect();
            top[k][l] = b;
            count[k][l] = attains.len();
            let total: f64 = attains.iter().map(|&i| mu[i][l]).sum();
            for &i in members {
                mu[i][l] = if !attains.contains(&i) {
                    0.0
                } else if total > 0.0 {
                    mu[i][l] * sol.lambda[l] / total
                } else {
                    sol.lambda[l] / attains.len() as f64
                };
            }
        }
    }
    GroupSolution { x, mu, top, count }
}

fn check(game: &dyn Mechanism, sol: &CentralSolution, scale: f64) -> Result<(), EquilibriumError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(EquilibriumError::BadScale(scale));
    }
    if sol.protocol != game.protocol() {
        return Err(EquilibriumError::ProtocolMismatch {
            expected: game.protocol(),
            found: sol.protocol,
        });
    }
    if !sol.is_certified() {
        return Err(EquilibriumError::Uncertified {
            residual: sol.kkt_residual,
            tol: sol.tol,
        });
    }
    Ok(())
}

/// Equilibrium profile with y = scale·x*, every consensus message at its
/// consensus value, and prices set from the oracle duals: p = λ* for
/// unicast, p¹ = μ* and w = λ* for multicast (relays included), a = 1.
pub fn construct_ne(
    game: &dyn Mechanism,
    sol: &CentralSolution,
    scale: f64,
) -> Result<Profile, EquilibriumError> {
    check(game, sol, scale)?;
    let topo = game.topology();
    let messages = match game.protocol() {
        Protocol::Utp => utp_messages(game, topo, sol, scale),
        Protocol::Mmtp => mmtp_messages(game, topo, sol, scale),
    };
    Ok(Profile { messages })
}

fn utp_messages(
    game: &dyn Mechanism,
    topo: &Topology,
    sol: &CentralSolution,
    k: f64,
) -> Vec<Vec<f64>> {
    let sets = &topo.sets;
    let y: Vec<f64> = sol.x.iter().map(|&x| k * x).collect();
    let y_on = |h: usize, l: usize| if sets.uses[h][l] { y[h] } else { 0.0 };
    (0..topo.n_agents())
        .map(|i| {
            game.coords(i)
                .into_iter()
                .map(|c| match c {
                    Coord::Demand => y[i],
                    Coord::Summary { via, link } => topo
                        .dir
                        .behind(i, via)
                        .into_iter()
                        .map(|h| y_on(h, link))
                        .sum(),
                    Coord::Proxy { of } => y[of],
                    Coord::Price { link } => sol.lambda[link],
                    other => unreachable!("unicast layout has no {other:?}"),
                })
                .collect()
        })
        .collect()
}

fn mmtp_messages(
    game: &dyn Mechanism,
    topo: &Topology,
    sol: &CentralSolution,
    k: f64,
) -> Vec<Vec<f64>> {
    let sets = &topo.sets;
    let g = snap_groups(sets, sol);
    let y: Vec<f64> = g.x.iter().map(|&x| k * x).collect();
    let group = |i: usize| sets.group_of[i].expect("multicast agents carry a group");
    let share = |h: usize, l: usize| {
        if !sets.uses[h][l] || g.x[h] == 0.0 || g.x[h] != g.top[group(h)][l] {
            0.0
        } else {
            y[h] / g.count[group(h)][l] as f64
        }
    };
    // Leader's w: its own μ plus the other members' μ, summed the way the
    // leader-consensus term does.
    let weight = |i: usize, l: usize| {
        if !sets.uses[i][l] {
            return sol.lambda[l];
        }
        let kk = group(i);
        let leader = topo.leaders.leader[kk][l].expect("leader assigned");
        let others: f64 = sets.group_link_members[kk][l]
            .iter()
            .filter(|&&j| j != leader)
            .map(|&j| g.mu[j][l])
            .sum();
        g.mu[leader][l] + others
    };
    (0..topo.n_agents())
        .map(|i| {
            game.coords(i)
                .into_iter()
                .map(|c| match c {
                    Coord::Demand => y[i],
                    Coord::Summary { via, link } => topo
                        .dir
                        .behind(i, via)
                        .into_iter()
                        .map(|h| share(h, link))
                        .sum(),
                    Coord::Proxy { of } => y[of],
                    Coord::OwnPrice { link } => g.mu[i][link],
                    Coord::ProxyPrice { of, link } => g.mu[of][link],
                    Coord::Share { link } => share(i, link),
                    Coord::Weight { link } => weight(i, link),
                    Coord::MaxDemand { link } => k * g.top[group(i)][link],
                    Coord::MaxCount { link } => {
                        if g.top[group(i)][link] > 0.0 {
                            g.count[group(i)][link] as f64
                        } else {
                            0.0
                        }
                    }
                    Coord::Offset { .. } | Coord::ProxyOffset { .. } => 1.0,
                    Coord::Price { .. } => unreachable!("multicast layout uses OwnPrice"),
                })
                .collect()
        })
        .collect()
}
