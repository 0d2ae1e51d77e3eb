#![allow(dead_code)]

use dmd_core::generate::three_agent_example;
use dmd_core::mechanism::Coord;
use dmd_core::oracle::solve;
use dmd_core::{
    CentralSolution, Game, Mechanism, ProblemInstance, Profile, SolverOptions, Topology,
    TopologyOptions,
};

pub fn game_of(inst: &ProblemInstance) -> Game {
    Game::new(Topology::build(inst, TopologyOptions::default()).unwrap())
}

pub fn extended_game_of(inst: &ProblemInstance) -> Game {
    let opts = TopologyOptions {
        extended: true,
        ..TopologyOptions::default()
    };
    Game::new(Topology::build(inst, opts).unwrap())
}

pub fn oracle(game: &Game) -> CentralSolution {
    solve(&game.topology().sets, &SolverOptions::default()).unwrap()
}

pub fn worked() -> Game {
    game_of(&three_agent_example())
}

pub fn index(game: &Game, agent: &str, label: &str) -> (usize, usize) {
    let sets = &game.topology().sets;
    let i = sets.agent_index(agent).unwrap();
    let k = game
        .coords(i)
        .iter()
        .position(|c: &Coord| c.label(sets) == label)
        .unwrap_or_else(|| panic!("agent {agent} has no component {label}"));
    (i, k)
}

pub fn set(game: &Game, p: &mut Profile, agent: &str, label: &str, v: f64) {
    let (i, k) = index(game, agent, label);
    p.messages[i][k] = v;
}

pub fn get(game: &Game, p: &Profile, agent: &str, label: &str) -> f64 {
    let (i, k) = index(game, agent, label);
    p.messages[i][k]
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
