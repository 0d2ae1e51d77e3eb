mod common;

use common::*;
use dmd_core::generate::{random_mmtp_instance, random_utp_instance, three_agent_example};
use dmd_core::instance::derive_index_sets;
use dmd_core::oracle::{brute_force_solve, kkt_residual, lipschitz_bound, solve};
use dmd_core::{Mechanism, SolverOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn three_agent_rates_and_price() {
    let sets = derive_index_sets(&three_agent_example()).unwrap();
    let sol = solve(&sets, &SolverOptions::default()).unwrap();
    for (x, want) in sol.x.iter().zip([1.0 / 6.0, 1.0 / 3.0, 0.5]) {
        assert!(close(*x, want, 1e-9), "{x} vs {want}");
    }
    assert!(close(sol.lambda[0], 6.0, 1e-7));
    assert!(sol.is_certified());
}

#[test]
fn barrier_matches_grid_search_on_small_instances() {
    let step = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in 0..10 {
        let inst = if t % 2 == 0 {
            random_utp_instance(&mut rng, 3, 1 + t % 3)
        } else {
            random_mmtp_instance(&mut rng, 2, 1, 3)
        };
        let sets = derive_index_sets(&inst).unwrap();
        let sol = solve(&sets, &SolverOptions::default()).unwrap();
        let grid = brute_force_solve(&sets, step).unwrap();
        let bound = 2.0 * step * lipschitz_bound(&sets, &sol.x);
        // The grid point is feasible, so it cannot beat the optimum.
        assert!(grid.objective <= sol.objective + 1e-9);
        assert!(
            sol.objective - grid.objective <= bound,
            "instance {t}: gap {} bound {bound}",
            sol.objective - grid.objective
        );
    }
}

#[test]
fn residual_of_reported_solution_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inst = random_utp_instance(&mut rng, 6, 3);
    let g = game_of(&inst);
    let sets = &g.topology().sets;
    let sol = oracle(&g);
    let r = kkt_residual(sets, &sol).max();
    assert!(close(r, sol.kkt_residual, 1e-12));
}
