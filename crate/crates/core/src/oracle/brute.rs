//! Exhaustive grid search, used as an independent check of the barrier
//! solver on instances with at most four rate variables.

use serde::Serialize;

use crate::instance::IndexSets;
use crate::valuation::Family;

use super::OracleError;

pub const MAX_BRUTE_FORCE_VARIABLES: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct BruteForceSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub grid_step: f64,
    pub points_evaluated: u64,
}

fn feasible(sets: &IndexSets, x: &[f64]) -> bool {
    sets.link_loads(x)
        .iter()
        .zip(&sets.capacity)
        .all(|(load, c)| *load <= c * (1.0 + 1e-12))
}

struct Search<'a> {
    sets: &'a IndexSets,
    step: f64,
    start: Vec<usize>,
    top: Vec<usize>,
    best: Option<(f64, Vec<f64>)>,
    evaluated: u64,
}

impl Search<'_> {
    fn value(&self, m: usize) -> f64 {
        m as f64 * self.step
    }

    fn recurse(&mut self, x: &mut Vec<f64>, depth: usize) {
        let n = x.len();
        if depth + 1 == n {
            // Objective is increasing in the last rate, so only the largest
            // feasible grid value matters.
            let (mut lo, mut hi) = (self.start[depth], self.top[depth]);
            x[depth] = self.value(lo);
            if !feasible(self.sets, x) {
                return;
            }
            while lo < hi {
                let mid = (lo + hi).div_ceil(2);
                x[depth] = self.value(mid);
                if feasible(self.sets, x) {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            x[depth] = self.value(lo);
            self.evaluated += 1;
            let f = self.sets.welfare(x);
            if self.best.as_ref().is_none_or(|(b, _)| f > *b) {
                self.best = Some((f, x.clone()));
            }
            return;
        }
        for m in self.start[depth]..=self.top[depth] {
            x[depth] = self.value(m);
            for k in depth + 1..n {
                x[k] = self.value(self.start[k]);
            }
            if !feasible(self.sets, x) {
                break;
            }
            self.recurse(x, depth + 1);
        }
    }
}

/// Returns the best point of the grid `{m * grid_step}` inside the
/// feasible set. Scaled-log rates start at one grid step since their value
/// at zero is −∞.
pub fn brute_force_solve(
    sets: &IndexSets,
    grid_step: f64,
) -> Result<BruteForceSolution, OracleError> {
    let n = sets.n_agents();
    if n > MAX_BRUTE_FORCE_VARIABLES {
        return Err(OracleError::TooManyVariables {
            max: MAX_BRUTE_FORCE_VARIABLES,
            found: n,
        });
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(OracleError::BadGridStep(grid_step));
    }
    let start: Vec<usize> = (0..n)
        .map(|i| usize::from(sets.valuations[i].family() == Family::ScaledLog))
        .collect();
    let top: Vec<usize> = (0..n)
        .map(|i| {
            let cap = sets.routes[i]
                .iter()
                .map(|&l| sets.capacity[l])
                .fold(f64::INFINITY, f64::min);
            (cap / grid_step + 1e-9).floor() as usize
        })
        .collect();
    let mut search = Search {
        sets,
        step: grid_step,
        start,
        top,
        best: None,
        evaluated: 0,
    };
    let mut x = vec![0.0; n];
    search.recurse(&mut x, 0);
    let (objective, x) = search.best.unwrap_or((f64::NEG_INFINITY, vec![0.0; n]));
    Ok(BruteForceSolution {
        x,
        objective,
        grid_step,
        points_evaluated: search.evaluated,
    })
}

/// Sum of marginal values at half the smallest positive optimal rate; a
/// Lipschitz constant for the objective on the region the grid search
/// needs to cover.
pub fn lipschitz_bound(sets: &IndexSets, x_star: &[f64]) -> f64 {
    let x_min = x_star
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min)
        / 2.0;
    sets.valuations
        .iter()
        .map(|v| {
            if x_min.is_finite() && x_min > 0.0 {
                v.grad(x_min).unwrap_or(f64::INFINITY)
            } else {
                v.grad_at_zero()
            }
        })
        .sum()
}
