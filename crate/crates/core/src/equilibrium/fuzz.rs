//! Random unilateral deviations from a profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::mechanism::{Mechanism, Profile};

use super::EquilibriumError;

/// Largest utility gain tolerated before a deviation counts as profitable.
pub const GAIN_TOL: f64 = 1e-7;

/// The most profitable deviation found.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub agent: String,
    /// (component label, change applied).
    pub changes: Vec<(String, f64)>,
    pub gain: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub trials: usize,
    pub radius: f64,
    pub seed: u64,
    pub max_gain: f64,
    /// Deviations the mechanism rejected (for example an unbounded radial
    /// factor); these are not profitable.
    pub rejected: usize,
    pub witness: Option<Witness>,
    pub passed: bool,
}

/// Perturbs one agent's message per trial. Even trials move a single
/// component, odd trials move all of them; each change is uniform in
/// [−radius, radius] and clipped to keep components feasible.
pub fn deviation_fuzz(
    game: &dyn Mechanism,
    profile: &Profile,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<DeviationReport, EquilibriumError> {
    game.check_shape(profile)?;
    let sets = &game.topology().sets;
    let n = sets.n_agents();
    let base: Vec<f64> = (0..n)
        .map(|i| game.utility(profile, i))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev = profile.clone();
    let mut max_gain = 0.0f64;
    let mut witness = None;
    let mut rejected = 0;
    for t in 0..trials {
        let i = rng.random_range(0..n);
        let coords = game.coords(i);
        let d = coords.len();
        let picks: Vec<usize> = if t % 2 == 0 {
            vec![rng.random_range(0..d)]
        } else {
            (0..d).collect()
        };
        let mut changes = Vec::with_capacity(picks.len());
        for k in picks {
            let delta = if radius > 0.0 {
                rng.random_range(-radius..=radius)
            } else {
                0.0
            };
            let old = profile.messages[i][k];
            let mut new = (old + delta).max(0.0);
            if coords[k].strictly_positive() && new <= 0.0 {
                new = old.min(1e-12);
            }
            dev.messages[i][k] = new;
            changes.push((coords[k].label(sets), new - old));
        }
        let result = game.utility(&dev, i);
        dev.messages[i].copy_from_slice(&profile.messages[i]);
        match result {
            Ok(u) => {
                let gain = u - base[i];
                if gain > max_gain || gain.is_nan() {
                    max_gain = if gain.is_nan() { f64::INFINITY } else { gain };
                    witness = Some(Witness {
                        agent: sets.agent_ids[i].clone(),
                        changes,
                        gain,
                    });
                }
            }
            Err(_) => rejected += 1,
        }
    }
    Ok(DeviationReport {
        trials,
        radius,
        seed,
        max_gain,
        rejected,
        witness,
        passed: max_gain <= GAIN_TOL,
    })
}
