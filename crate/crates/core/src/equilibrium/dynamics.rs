//! Sequential best-response dynamics. Nothing is claimed about
//! convergence; the trace is the result.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mechanism::{Mechanism, MechanismError, Profile};

use super::{max_abs_gap, EquilibriumError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    /// Agents in id order every round.
    #[default]
    RoundRobin,
    /// A fresh seeded permutation every round.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsOptions {
    pub rounds: usize,
    pub order: Order,
    pub seed: u64,
    /// Stop once a whole round moves no component by more than this.
    pub stop_change: f64,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        Self {
            rounds: 50,
            order: Order::RoundRobin,
            seed: 0,
            stop_change: 1e-10,
        }
    }
}

/// One best-response update.
#[derive(Debug, Clone, Serialize)]
pub struct DynamicsStep {
    pub round: usize,
    pub agent: usize,
    pub agent_id: String,
    pub utility_before: f64,
    pub utility_after: f64,
    /// Largest component change of the acting agent's message.
    pub change: f64,
    /// ‖x̂ − x*‖∞ after the step, when x* is known.
    pub gap: Option<f64>,
    /// Realized load of every link after the step.
    pub loads: Vec<f64>,
}

/// State at the end of a round (round 0 is the initial profile).
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub round: usize,
    pub profile: Vec<Vec<f64>>,
    pub allocation: Vec<f64>,
    pub taxes: Vec<f64>,
    pub utilities: Vec<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsTrace {
    pub steps: Vec<DynamicsStep>,
    pub snapshots: Vec<Snapshot>,
    pub rounds_run: usize,
    /// A round changed no component by more than the stop threshold.
    pub stopped_early: bool,
}

/// Profile with every component uniform in [0.05, 1].
pub fn random_profile<R: Rng>(game: &dyn Mechanism, rng: &mut R) -> Profile {
    Profile {
        messages: (0..game.topology().n_agents())
            .map(|i| {
                (0..game.dim(i))
                    .map(|_| rng.random_range(0.05..=1.0))
                    .collect()
            })
            .collect(),
    }
}

fn snapshot(
    game: &dyn Mechanism,
    profile: &Profile,
    round: usize,
    x_star: Option<&[f64]>,
) -> Result<Snapshot, MechanismError> {
    let outcomes = game.outcomes(profile)?;
    let allocation: Vec<f64> = outcomes.iter().map(|o| o.allocation).collect();
    Ok(Snapshot {
        round,
        profile: profile.messages.clone(),
        gap: x_star.map(|x| max_abs_gap(&allocation, x)),
        taxes: outcomes.iter().map(|o| o.tax_total).collect(),
        utilities: outcomes.iter().map(|o| o.utility).collect(),
        allocation,
    })
}

pub fn run_dynamics(
    game: &dyn Mechanism,
    init: Profile,
    opts: &DynamicsOptions,
    x_star: Option<&[f64]>,
) -> Result<DynamicsTrace, EquilibriumError> {
    game.check_shape(&init)?;
    let mut trace = DynamicsTrace {
        steps: Vec::new(),
        snapshots: vec![snapshot(game, &init, 0, x_star)?],
        rounds_run: 0,
        stopped_early: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut profile = init;
    for round in 1..=opts.rounds {
        let mut order: Vec<usize> = (0..game.topology().n_agents()).collect();
        if opts.order == Order::Random {
            order.shuffle(&mut rng);
        }
        let mut round_change = 0.0f64;
        for i in order {
            match step(game, &mut profile, round, i, x_star) {
                Ok(s) => {
                    round_change = round_change.max(s.change);
                    trace.steps.push(s);
                }
                Err(source) => return Err(fail(game, round, i, source, trace)),
            }
        }
        trace.rounds_run = round;
        match snapshot(game, &profile, round, x_star) {
            Ok(s) => trace.snapshots.push(s),
            Err(source) => return Err(fail(game, round, 0, source, trace)),
        }
        if round_change < opts.stop_change {
            trace.stopped_early = true;
            break;
        }
    }
    Ok(trace)
}

fn fail(
    game: &dyn Mechanism,
    round: usize,
    agent: usize,
    source: MechanismError,
    partial: DynamicsTrace,
) -> EquilibriumError {
    EquilibriumError::Dynamics {
        round,
        agent: game.topology().sets.agent_ids[agent].clone(),
        source,
        partial: Box::new(partial),
    }
}

/// Replaces agent i's message by its best response.
fn step(
    game: &dyn Mechanism,
    profile: &mut Profile,
    round: usize,
    i: usize,
    x_star: Option<&[f64]>,
) -> Result<DynamicsStep, MechanismError> {
    let sets = &game.topology().sets;
    let before = game.utility(profile, i)?;
    let next = game.best_response(profile, i)?;
    let change = next
        .iter()
        .zip(&profile.messages[i])
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    profile.messages[i] = next;
    let outcomes = game.outcomes(profile)?;
    let allocation: Vec<f64> = outcomes.iter().map(|o| o.allocation).collect();
    Ok(DynamicsStep {
        round,
        agent: i,
        agent_id: sets.agent_ids[i].clone(),
        utility_before: before,
        utility_after: outcomes[i].utility,
        change,
        gap: x_star.map(|x| max_abs_gap(&allocation, x)),
        loads: sets.link_loads(&allocation),
    })
}
