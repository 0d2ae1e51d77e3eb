mod common;

use common::*;
use dmd_core::equilibrium::{
    audit_ne_properties, certify, construct_ne, deviation_fuzz, random_profile, run_dynamics,
    verify_ne, DynamicsOptions, Order,
};
use dmd_core::generate::{
    path_family, random_mmtp_instance, random_utp_instance, three_agent_example,
};
use dmd_core::instance::{ProblemInstance, Protocol};
use dmd_core::mechanism::{Coord, Profile};
use dmd_core::{Game, Mechanism};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn worked_ne(k: f64) -> (Game, Profile) {
    let g = worked();
    let sol = oracle(&g);
    let p = construct_ne(&g, &sol, k).unwrap();
    (g, p)
}

fn multicast(inst: &ProblemInstance) -> Game {
    let mut inst = inst.clone();
    inst.protocol = Protocol::Mmtp;
    for a in &mut inst.agents {
        a.group.get_or_insert_with(|| format!("g{}", a.id));
    }
    game_of(&inst)
}

#[test]
fn worked_example_equilibrium_for_every_scale() {
    for k in [0.5, 1.0, 2.0, 10.0] {
        let (g, p) = worked_ne(k);
        for id in ["1", "2", "3"] {
            assert!(close(get(&g, &p, id, "p[l1]"), 6.0, 1e-7), "k = {k}");
        }
        for (i, want) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            let o = g.outcome(&p, i).unwrap();
            assert!(
                close(o.tax_total, want, 1e-7),
                "k = {k}, agent {i}: {}",
                o.tax_total
            );
            assert!(close(o.allocation, (i as f64 + 1.0) / 6.0, 1e-9));
        }
        let rep = verify_ne(&g, &p, 1e-8).unwrap();
        assert!(rep.passed, "k = {k}: residual {}", rep.max_residual);
    }
}

#[test]
fn bumped_price_is_not_an_equilibrium() {
    let (g, mut p) = worked_ne(1.0);
    set(&g, &mut p, "1", "p[l1]", 6.5);
    let rep = verify_ne(&g, &p, 1e-6).unwrap();
    assert!(!rep.passed);
    assert!(rep.max_residual > 0.5, "residual {}", rep.max_residual);
}

#[test]
fn zero_profile_fails_verification() {
    let g = worked();
    let p = g.zero_profile();
    if let Ok(rep) = verify_ne(&g, &p, 1e-6) {
        assert!(!rep.passed)
    }
}

#[test]
fn equilibrium_is_a_best_response_fixed_point() {
    let (g, p) = worked_ne(1.0);
    for i in 0..3 {
        let br = g.best_response(&p, i).unwrap();
        let d = br
            .iter()
            .zip(&p.messages[i])
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d <= 1e-9, "agent {i} moves {d}");
    }
}

#[test]
fn price_best_response_matches_grid_argmax() {
    let (g, mut p) = worked_ne(1.0);
    // Off-consensus price for agent 2, with agent 1 quoting something else.
    set(&g, &mut p, "1", "p[l1]", 5.0);
    set(&g, &mut p, "3", "p[l1]", 7.5);
    let (i, k) = index(&g, "2", "p[l1]");
    let br = g.best_response(&p, i).unwrap()[k];
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut q = p.clone();
    for s in 0..=20000 {
        let v = s as f64 * 1e-3;
        q.messages[i][k] = v;
        let u = g.utility(&q, i).unwrap();
        if u > best.0 {
            best = (u, v);
        }
    }
    assert!((br - best.1).abs() <= 2e-3, "br {br} grid {}", best.1);
}

#[test]
fn demand_best_response_is_inverse_marginal_value() {
    let (g, mut p) = worked_ne(1.0);
    // Scale agent 3's summaries so r differs from 1.
    set(&g, &mut p, "3", "n[1][l1]", 1.0);
    let i = 2;
    let o = g.outcome(&p, i).unwrap();
    let price = g.own_price_sum(&p, i);
    let (_, k) = index(&g, "3", "y");
    let br = g.best_response(&p, i).unwrap()[k];
    let want = 3.0 / (price * o.radial);
    assert!(close(br, want, 1e-9), "br {br} want {want}");
}

#[test]
fn dynamics_from_equilibrium_stop_after_one_round() {
    let (g, p) = worked_ne(1.0);
    let sol = oracle(&g);
    let tr = run_dynamics(&g, p, &DynamicsOptions::default(), Some(&sol.x)).unwrap();
    assert!(tr.stopped_early);
    assert_eq!(tr.rounds_run, 1);
    assert!(tr.snapshots.last().unwrap().gap.unwrap() <= 1e-9);
}

#[test]
fn dynamics_after_price_perturbation_record_every_step() {
    let (g, mut p) = worked_ne(1.0);
    let v = get(&g, &p, "1", "p[l1]");
    set(&g, &mut p, "1", "p[l1]", v + 0.1);
    let opts = DynamicsOptions {
        rounds: 20,
        ..DynamicsOptions::default()
    };
    let tr = run_dynamics(&g, p, &opts, None).unwrap();
    assert_eq!(tr.steps.len(), 3 * tr.rounds_run);
    assert_eq!(tr.snapshots.len(), tr.rounds_run + 1);
    for s in &tr.steps {
        // A best response never lowers the acting agent's utility.
        assert!(s.utility_after >= s.utility_before - 1e-9, "{s:?}");
    }
}

#[test]
fn random_start_best_responses_are_monotone() {
    let g = worked();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let init = random_profile(&g, &mut rng);
    let opts = DynamicsOptions {
        rounds: 10,
        order: Order::Random,
        seed: 3,
        ..DynamicsOptions::default()
    };
    let tr = run_dynamics(&g, init, &opts, None).unwrap();
    for s in &tr.steps {
        assert!(s.utility_after >= s.utility_before - 1e-9, "{s:?}");
    }
}

#[test]
fn snapshots_agree_with_outcomes() {
    let g = worked();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let init = random_profile(&g, &mut rng);
    let tr = run_dynamics(
        &g,
        init,
        &DynamicsOptions {
            rounds: 3,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    for s in &tr.snapshots {
        let p = Profile {
            messages: s.profile.clone(),
        };
        let out = g.outcomes(&p).unwrap();
        for (i, o) in out.iter().enumerate() {
            assert_eq!(o.allocation, s.allocation[i]);
            assert_eq!(o.tax_total, s.taxes[i]);
            assert_eq!(o.utility, s.utilities[i]);
        }
    }
}

#[test]
fn fuzz_finds_no_gain_at_equilibrium() {
    let (g, p) = worked_ne(1.0);
    let rep = deviation_fuzz(&g, &p, 1000, 0.5, 42).unwrap();
    assert!(rep.passed, "gain {} via {:?}", rep.max_gain, rep.witness);
}

#[test]
fn fuzz_finds_gain_off_equilibrium() {
    let (g, mut p) = worked_ne(1.0);
    set(&g, &mut p, "2", "q[1]", 0.4);
    let rep = deviation_fuzz(&g, &p, 1000, 0.5, 42).unwrap();
    assert!(!rep.passed);
    assert!(rep.witness.is_some());
}

#[test]
fn zero_radius_fuzz_gains_nothing() {
    let (g, p) = worked_ne(1.0);
    let rep = deviation_fuzz(&g, &p, 200, 0.0, 1).unwrap();
    assert_eq!(rep.max_gain, 0.0);
}

#[test]
fn audit_reports_summary_violation() {
    let (g, mut p) = worked_ne(1.0);
    let sol = oracle(&g);
    let clean = audit_ne_properties(&g, &p, Some(&sol), 1e-6).unwrap();
    assert!(clean.iter().all(|a| a.passed), "{clean:?}");
    set(&g, &mut p, "1", "n[3][l1]", 0.9);
    let bad = audit_ne_properties(&g, &p, Some(&sol), 1e-6).unwrap();
    let item = bad.iter().find(|a| a.name == "consensus.summary").unwrap();
    assert!(!item.passed);
    assert!(close(item.residual, 0.4, 1e-7));
}

#[test]
fn multicast_weights_equal_link_price() {
    let g = multicast(&three_agent_example());
    let sol = oracle(&g);
    let p = construct_ne(&g, &sol, 1.0).unwrap();
    for id in ["1", "2", "3"] {
        assert!(close(get(&g, &p, id, "w[l1]"), sol.lambda[0], 1e-12));
    }
    let cert = certify(&g, &p, Some(&sol), 1e-6).unwrap();
    assert!(cert.first_order.passed, "{:?}", cert.first_order);
}

#[test]
fn symmetric_group_splits_share() {
    // Two groups of two identical agents on a path, every agent on both links.
    let mut inst = path_family(Protocol::Mmtp, 4);
    for a in &mut inst.agents {
        a.valuation.a = 1.0;
    }
    let g = game_of(&inst);
    let sol = oracle(&g);
    let p = construct_ne(&g, &sol, 1.0).unwrap();
    let sets = &g.topology().sets;
    let mut leaders = 0;
    for i in 0..4 {
        let y = p.messages[i][0];
        assert!(y > 0.0);
        for (k, c) in g.coords(i).into_iter().enumerate() {
            match c {
                Coord::MaxCount { .. } => {
                    leaders += 1;
                    assert_eq!(p.messages[i][k], 2.0);
                }
                Coord::Share { .. } => {
                    assert!(close(p.messages[i][k], y / 2.0, 1e-15), "{}", c.label(sets))
                }
                _ => {}
            }
        }
    }
    // One leader per (group, link).
    assert_eq!(leaders, 4);
    let cert = certify(&g, &p, Some(&sol), 1e-6).unwrap();
    assert!(cert.passed, "{:?}", cert.failures());
}

#[test]
fn singleton_groups_reproduce_unicast() {
    let u = worked();
    let m = multicast(&three_agent_example());
    let (su, sm) = (oracle(&u), oracle(&m));
    let (pu, pm) = (
        construct_ne(&u, &su, 1.0).unwrap(),
        construct_ne(&m, &sm, 1.0).unwrap(),
    );
    for i in 0..3 {
        let (ou, om) = (u.outcome(&pu, i).unwrap(), m.outcome(&pm, i).unwrap());
        assert!(close(ou.allocation, om.allocation, 1e-9));
        assert!(close(ou.tax_total, om.tax_total, 1e-6));
    }
}

#[test]
fn random_instances_certify() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..5 {
        let inst = random_utp_instance(&mut rng, 5, 3);
        let g = game_of(&inst);
        let sol = oracle(&g);
        let p = construct_ne(&g, &sol, 1.0).unwrap();
        let cert = certify(&g, &p, Some(&sol), 1e-6).unwrap();
        assert!(cert.passed, "{:?}", cert.failures());
    }
    for _ in 0..5 {
        let inst = random_mmtp_instance(&mut rng, 3, 2, 3);
        let g = game_of(&inst);
        let sol = oracle(&g);
        let p = construct_ne(&g, &sol, 1.0).unwrap();
        let cert = certify(&g, &p, Some(&sol), 1e-6).unwrap();
        assert!(cert.passed, "{:?}", cert.failures());
    }
}

#[test]
fn any_leader_choice_certifies() {
    use dmd_core::{Topology, TopologyOptions};
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut differed = 0;
    for _ in 0..6 {
        let inst = random_mmtp_instance(&mut rng, 3, 2, 8);
        let default = game_of(&inst);
        for seed in 0..4 {
            let opts = TopologyOptions {
                leader_seed: Some(seed),
                ..TopologyOptions::default()
            };
            let g = Game::new(Topology::build(&inst, opts).unwrap());
            if g.topology().leaders.leader != default.topology().leaders.leader {
                differed += 1;
            }
            let sol = oracle(&g);
            let p = construct_ne(&g, &sol, 1.0).unwrap();
            let cert = certify(&g, &p, Some(&sol), 1e-6).unwrap();
            assert!(cert.passed, "seed {seed}: {:?}", cert.failures());
        }
    }
    assert!(differed > 0, "no tie was ever broken differently");
}
