//! Log-barrier method with damped Newton steps.
//!
//! Both problems are posed as maximizing Σ v_i(x_i) subject to linear
//! inequalities `a·z <= h`. The unicast variables are the rates; the
//! multicast variables append one group rate per non-empty G_k^l. Duals
//! are recovered as θ / slack, then optionally refined by a Gauss-Newton
//! solve of the KKT equalities on the detected active set.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::instance::{IndexSets, Protocol};
use crate::valuation::Family;

use super::kkt::kkt_report;
use super::{effective_zero, CentralSolution, OracleError, SolverOptions};

#[derive(Debug, Clone, Copy)]
enum Kind {
    Link(usize),
    Pair { agent: usize, link: usize },
    NonNegative,
}

#[derive(Debug, Clone)]
struct Constraint {
    h: f64,
    a: Vec<(usize, f64)>,
    kind: Kind,
}

struct Problem<'a> {
    sets: &'a IndexSets,
    protocol: Protocol,
    n_agents: usize,
    n_vars: usize,
    /// Variable index of b_k^l, `[k][l]`.
    b_var: Vec<Vec<Option<usize>>>,
    constraints: Vec<Constraint>,
}

impl<'a> Problem<'a> {
    fn new(sets: &'a IndexSets, protocol: Protocol) -> Self {
        let n = sets.n_agents();
        let nl = sets.n_links();
        let mut n_vars = n;
        let mut b_var = vec![vec![None; nl]; sets.n_groups()];
        let mut constraints = Vec::new();
        match protocol {
            Protocol::Utp => {
                for l in 0..nl {
                    constraints.push(Constraint {
                        h: sets.capacity[l],
                        a: sets.link_users[l].iter().map(|&i| (i, 1.0)).collect(),
                        kind: Kind::Link(l),
                    });
                }
            }
            Protocol::Mmtp => {
                for l in 0..nl {
                    for &k in &sets.link_groups[l] {
                        b_var[k][l] = Some(n_vars);
                        n_vars += 1;
                    }
                }
                for l in 0..nl {
                    constraints.push(Constraint {
                        h: sets.capacity[l],
                        a: sets.link_groups[l]
                            .iter()
                            .map(|&k| (b_var[k][l].unwrap(), 1.0))
                            .collect(),
                        kind: Kind::Link(l),
                    });
                }
                for l in 0..nl {
                    for &k in &sets.link_groups[l] {
                        let bv = b_var[k][l].unwrap();
                        for &i in &sets.group_link_members[k][l] {
                            constraints.push(Constraint {
                                h: 0.0,
                                a: vec![(i, 1.0), (bv, -1.0)],
                                kind: Kind::Pair { agent: i, link: l },
                            });
                        }
                    }
                }
            }
        }
        for i in 0..n {
            if sets.valuations[i].family() == Family::ShiftedLog {
                constraints.push(Constraint {
                    h: 0.0,
                    a: vec![(i, -1.0)],
                    kind: Kind::NonNegative,
                });
            }
        }
        Self {
            sets,
            protocol,
            n_agents: n,
            n_vars,
            b_var,
            constraints,
        }
    }

    fn slack(&self, c: &Constraint, z: &[f64]) -> f64 {
        c.h - c.a.iter().map(|&(j, w)| w * z[j]).sum::<f64>()
    }

    fn strictly_positive(&self, i: usize) -> bool {
        self.sets.valuations[i].family() != Family::ShiftedLog
    }

    fn interior(&self, z: &[f64]) -> bool {
        (0..self.n_agents).all(|i| !self.strictly_positive(i) || z[i] > 0.0)
            && self.constraints.iter().all(|c| self.slack(c, z) > 0.0)
    }

    fn value(&self, z: &[f64], theta: f64) -> Option<f64> {
        if !self.interior(z) {
            return None;
        }
        let mut f = 0.0;
        for i in 0..self.n_agents {
            f += self.sets.valuations[i].eval(z[i]).ok()?;
        }
        for c in &self.constraints {
            f += theta * self.slack(c, z).ln();
        }
        f.is_finite().then_some(f)
    }

    fn derivatives(&self, z: &[f64], theta: f64) -> (DVector<f64>, DMatrix<f64>) {
        let nv = self.n_vars;
        let mut g = DVector::zeros(nv);
        let mut h = DMatrix::zeros(nv, nv);
        for i in 0..self.n_agents {
            let v = &self.sets.valuations[i];
            g[i] = v.grad(z[i]).unwrap_or(f64::INFINITY);
            h[(i, i)] = v.curvature(z[i]).unwrap_or(f64::NEG_INFINITY);
        }
        for c in &self.constraints {
            let s = self.slack(c, z);
            for &(j, wj) in &c.a {
                g[j] -= theta * wj / s;
                for &(k, wk) in &c.a {
                    h[(j, k)] -= theta * wj * wk / (s * s);
                }
            }
        }
        (g, h)
    }

    fn duals(&self, z: &[f64], theta: f64) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| theta / self.slack(c, z))
            .collect()
    }

    fn initial_point(&self, fraction: f64) -> Vec<f64> {
        let x0 = fraction * self.sets.c_min() / self.n_agents as f64;
        let mut z = vec![x0; self.n_vars];
        for v in z.iter_mut().skip(self.n_agents) {
            *v = 1.5 * x0;
        }
        z
    }

    /// Largest step along `d` that keeps every slack and strict rate positive.
    fn max_step(&self, z: &[f64], d: &DVector<f64>) -> f64 {
        let mut t = f64::INFINITY;
        for c in &self.constraints {
            let rate: f64 = c.a.iter().map(|&(j, w)| w * d[j]).sum();
            if rate > 0.0 {
                t = t.min(self.slack(c, z) / rate);
            }
        }
        for i in 0..self.n_agents {
            if self.strictly_positive(i) && d[i] < 0.0 {
                t = t.min(-z[i] / d[i]);
            }
        }
        t
    }
}

fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
    let neg = -h.clone();
    if let Some(ch) = neg.clone().cholesky() {
        let d = ch.solve(g);
        if d.iter().all(|v| v.is_finite()) {
            return Some(d);
        }
    }
    let scale = neg.diagonal().amax().max(1.0);
    let mut shift = 1e-12 * scale;
    for _ in 0..12 {
        let mut m = neg.clone();
        for k in 0..m.nrows() {
            m[(k, k)] += shift;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift *= 100.0;
    }
    None
}

/// Runs damped Newton on the barrier objective at fixed θ. Returns the
/// number of steps taken.
fn center(p: &Problem, z: &mut Vec<f64>, theta: f64, max_steps: usize) -> usize {
    let mut steps = 0;
    let Some(mut f) = p.value(z, theta) else {
        return 0;
    };
    while steps < max_steps {
        let (g, h) = p.derivatives(z, theta);
        let Some(d) = newton_direction(&g, &h) else {
            break;
        };
        let dec = g.dot(&d);
        if !(dec > 1e-24) {
            break;
        }
        let mut t = (0.99 * p.max_step(z, &d)).min(1.0);
        let mut accepted = false;
        for _ in 0..80 {
            let trial: Vec<f64> = z.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect();
            if let Some(ft) = p.value(&trial, theta) {
                // Inside the quadratic convergence region rounding noise in
                // the objective can mask progress; take the full step.
                if ft >= f + 0.25 * t * dec || (dec < 1e-12 && t == 1.0) {
                    *z = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        steps += 1;
        if !accepted {
            break;
        }
    }
    steps
}

/// Solves the KKT equalities on the active set by Gauss-Newton with a
/// pseudo-inverse step, which tolerates degenerate (non-unique) duals.
fn polish(p: &Problem, z0: &[f64], duals0: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let active: Vec<usize> = (0..p.constraints.len())
        .filter(|&c| duals0[c] >= p.slack(&p.constraints[c], z0))
        .collect();
    let nv = p.n_vars;
    let na = active.len();
    let mut z = z0.to_vec();
    let mut nu: Vec<f64> = active.iter().map(|&c| duals0[c]).collect();

    let residual = |z: &[f64], nu: &[f64]| -> Option<DVector<f64>> {
        let mut r = DVector::zeros(nv + na);
        for i in 0..p.n_agents {
            let xi = z[i];
            r[i] = if xi == 0.0 && !p.strictly_positive(i) {
                p.sets.valuations[i].grad_at_zero()
            } else {
                p.sets.valuations[i].grad(xi).ok()?
            };
        }
        for (k, &c) in active.iter().enumerate() {
            for &(j, w) in &p.constraints[c].a {
                r[j] -= nu[k] * w;
            }
            r[nv + k] = p.slack(&p.constraints[c], z);
        }
        r.iter().all(|v| v.is_finite()).then_some(r)
    };

    let mut r = residual(&z, &nu)?;
    for _ in 0..60 {
        let norm = r.amax();
        if norm < 1e-15 {
            break;
        }
        let mut j = DMatrix::zeros(nv + na, nv + na);
        for i in 0..p.n_agents {
            let xi = z[i].max(0.0);
            j[(i, i)] = if xi == 0.0 {
                0.0
            } else {
                p.sets.valuations[i].curvature(xi).ok()?
            };
        }
        for (k, &c) in active.iter().enumerate() {
            for &(col, w) in &p.constraints[c].a {
                j[(col, nv + k)] = -w;
                j[(nv + k, col)] = -w;
            }
        }
        let svd = j.svd(true, true);
        let delta = svd.solve(&(-&r), 1e-13).ok()?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let zt: Vec<f64> = (0..nv).map(|v| z[v] + t * delta[v]).collect();
            let nut: Vec<f64> = (0..na).map(|k| nu[k] + t * delta[nv + k]).collect();
            let domain_ok = (0..p.n_agents).all(|i| {
                if p.strictly_positive(i) {
                    zt[i] > 0.0
                } else {
                    zt[i] > -1e-300
                }
            });
            if domain_ok {
                if let Some(rt) = residual(&zt, &nut) {
                    if rt.amax() < norm || t == 1.0 && rt.amax() <= norm * 1.0001 {
                        z = zt;
                        nu = nut;
                        r = rt;
                        improved = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    for v in z.iter_mut().take(p.n_agents) {
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
    }
    let mut duals = vec![0.0; p.constraints.len()];
    for (k, &c) in active.iter().enumerate() {
        if nu[k] < -1e-10 {
            return None;
        }
        duals[c] = nu[k].max(0.0);
    }
    Some((z, duals))
}

fn assemble(
    p: &Problem,
    z: &[f64],
    duals: &[f64],
    opts: &SolverOptions,
    theta: f64,
    steps: usize,
    polished: bool,
) -> CentralSolution {
    let sets = p.sets;
    let n = p.n_agents;
    let nl = sets.n_links();
    let zero = effective_zero(sets);
    let x: Vec<f64> = z[..n]
        .iter()
        .map(|&v| if v <= zero { 0.0 } else { v })
        .collect();
    let mut lambda = vec![0.0; nl];
    let mut mu = match p.protocol {
        Protocol::Utp => Vec::new(),
        Protocol::Mmtp => vec![vec![None; nl]; n],
    };
    for (c, con) in p.constraints.iter().enumerate() {
        match con.kind {
            Kind::Link(l) => lambda[l] = duals[c],
            Kind::Pair { agent, link } => mu[agent][link] = Some(duals[c]),
            Kind::NonNegative => {}
        }
    }
    let b: Vec<Vec<Option<f64>>> = match p.protocol {
        Protocol::Utp => Vec::new(),
        Protocol::Mmtp => (0..sets.n_groups())
            .map(|k| {
                (0..nl)
                    .map(|l| {
                        p.b_var[k][l].map(|_| {
                            sets.group_link_members[k][l]
                                .iter()
                                .map(|&i| x[i])
                                .fold(0.0, f64::max)
                        })
                    })
                    .collect()
            })
            .collect(),
    };
    let kkt = kkt_report(sets, &x, &b, &lambda, &mu);
    CentralSolution {
        protocol: p.protocol,
        objective: sets.welfare(&x),
        kkt_residual: kkt.max(),
        kkt,
        x,
        b,
        lambda,
        mu,
        tol: opts.kkt_tol,
        final_theta: theta,
        newton_steps: steps,
        polished,
    }
}

pub(super) fn solve(
    sets: &IndexSets,
    protocol: Protocol,
    opts: &SolverOptions,
) -> Result<CentralSolution, OracleError> {
    let p = Problem::new(sets, protocol);
    let mut z = p.initial_point(opts.interior_fraction);
    let mut theta = opts.theta_start;
    let mut steps = 0;
    let mut last;
    loop {
        steps += center(&p, &mut z, theta, opts.max_newton_steps);
        if theta <= opts.theta_stop * (1.0 + 1e-9) {
            let duals = p.duals(&z, theta);
            let mut best = assemble(&p, &z, &duals, opts, theta, steps, false);
            if opts.polish {
                if let Some((zp, dp)) = polish(&p, &z, &duals) {
                    let cand = assemble(&p, &zp, &dp, opts, theta, steps, true);
                    if cand.kkt_residual < best.kkt_residual {
                        best = cand;
                    }
                }
            }
            debug!(
                "theta {theta:e}: kkt residual {:e} (polished: {})",
                best.kkt_residual, best.polished
            );
            last = best.kkt_residual;
            if best.kkt_residual <= opts.kkt_tol {
                return Ok(best);
            }
            if theta <= opts.theta_floor * (1.0 + 1e-9) {
                break;
            }
        }
        theta *= 0.1;
    }
    Err(OracleError::NonConvergence {
        tol: opts.kkt_tol,
        residual: last,
        theta,
    })
}
