use std::path::Path;
use std::time::Instant;

use dmd_core::equilibrium::{
    certify, construct_ne, deviation_fuzz, random_profile, run_dynamics, DynamicsOptions,
    DynamicsTrace, EquilibriumError,
};
use dmd_core::generate::path_family;
use dmd_core::graph::link_users_connected;
use dmd_core::instance::{parse_instance, validate_instance};
use dmd_core::mechanism::{dimensions, profile_to_json};
use dmd_core::oracle::solve as solve_central;
use dmd_core::{
    CentralSolution, Game, IndexSets, Mechanism, ProblemInstance, Profile, Protocol, SolverOptions,
    Topology, TopologyOptions,
};
use log::{debug, info};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::args::{DimsArgs, DynamicsArgs, InitArg, InstanceArgs, NeArgs, ProtocolArg, SolveArgs};
use crate::error::CliError;
use crate::report::{digest, to_value, write_text, RunReport};

struct Loaded {
    instance: ProblemInstance,
    digest: String,
}

fn load(path: &Path, protocol: Option<ProtocolArg>) -> Result<Loaded, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let text = String::from_utf8_lossy(&bytes);
    let mut instance = parse_instance(&text)?;
    if let Some(p) = protocol {
        instance.protocol = p.into();
    }
    debug!(
        "loaded {} agents, {} links from {}",
        instance.agents.len(),
        instance.links.len(),
        path.display()
    );
    Ok(Loaded {
        instance,
        digest: digest(&bytes),
    })
}

fn topology(
    instance: &ProblemInstance,
    extended: bool,
    seed: Option<u64>,
) -> Result<Topology, CliError> {
    let opts = TopologyOptions {
        extended,
        leader_seed: seed,
        ..TopologyOptions::default()
    };
    Ok(Topology::build(instance, opts)?)
}

fn oracle(sets: &IndexSets, tol: f64) -> Result<CentralSolution, CliError> {
    let opts = SolverOptions {
        kkt_tol: tol,
        ..SolverOptions::default()
    };
    let sol = solve_central(sets, &opts)?;
    info!(
        "oracle: objective {:.12}, KKT residual {:.3e} after {} Newton steps",
        sol.objective, sol.kkt_residual, sol.newton_steps
    );
    Ok(sol)
}

fn keyed(ids: &[String], values: &[f64]) -> Value {
    Value::Object(
        ids.iter()
            .zip(values)
            .map(|(k, &v)| (k.clone(), json!(v)))
            .collect::<Map<_, _>>(),
    )
}

fn oracle_summary(sets: &IndexSets, sol: &CentralSolution) -> Value {
    json!({
        "certified": sol.is_certified(),
        "objective": sol.objective,
        "kkt_residual": sol.kkt_residual,
        "kkt": sol.kkt,
        "newton_steps": sol.newton_steps,
        "polished": sol.polished,
        "x": keyed(&sets.agent_ids, &sol.x),
        "lambda": keyed(&sets.link_ids, &sol.lambda),
    })
}

fn start(command: &'static str, loaded: &Loaded, seed: u64) -> RunReport {
    let mut r = RunReport::new(command);
    r.instance_digest = Some(loaded.digest.clone());
    r.protocol = Some(loaded.instance.protocol.to_string());
    r.seed = Some(seed);
    r
}

fn finish(mut report: RunReport, t0: Instant, out: Option<&Path>) -> Result<(), CliError> {
    report.elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
    report.write(out)
}

pub fn solve(a: &SolveArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let c = &a.common;
    let loaded = load(&c.instance, c.protocol)?;
    let topo = topology(&loaded.instance, c.extended, None)?;
    let sol = oracle(&topo.sets, a.tol)?;
    let mut report = start("solve", &loaded, c.seed);
    report.oracle = Some(oracle_summary(&topo.sets, &sol));
    report.result = json!({ "solution": sol });
    finish(report, t0, c.out.as_deref())
}

pub fn ne(a: &NeArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let c = &a.common;
    let loaded = load(&c.instance, c.protocol)?;
    let game = Game::new(topology(&loaded.instance, c.extended, None)?);
    let sets = &game.topology().sets;
    let sol = oracle(sets, SolverOptions::default().kkt_tol)?;
    let profile = construct_ne(&game, &sol, a.scale)?;
    let cert = certify(&game, &profile, Some(&sol), a.tol)?;
    let outcomes = game.outcomes(&profile)?;
    let fuzz = if a.fuzz > 0 {
        Some(deviation_fuzz(&game, &profile, a.fuzz, a.radius, c.seed)?)
    } else {
        None
    };
    let mut failures = cert.failures();
    if fuzz.as_ref().is_some_and(|f| !f.passed) {
        failures.push("deviation_fuzz".to_string());
    }
    let profile_json = profile_to_json(&game, &profile);
    let pick = |f: fn(&dmd_core::mechanism::AgentOutcome) -> f64| -> Vec<f64> {
        outcomes.iter().map(f).collect()
    };
    let mut report = start("ne", &loaded, c.seed);
    report.passed = failures.is_empty();
    report.oracle = Some(oracle_summary(sets, &sol));
    report.certificate = Some(to_value(&cert));
    report.result = json!({
        "scale": a.scale,
        "allocation": keyed(&sets.agent_ids, &pick(|o| o.allocation)),
        "taxes": keyed(&sets.agent_ids, &pick(|o| o.tax_total)),
        "utilities": keyed(&sets.agent_ids, &pick(|o| o.utility)),
        "total_tax": pick(|o| o.tax_total).iter().sum::<f64>(),
        "failures": failures,
        "fuzz": fuzz,
        "profile": profile_json,
    });
    if let Some(p) = &a.profile_out {
        let text = serde_json::to_string_pretty(&profile_json).expect("profile serializes");
        write_text(p, &(text + "\n"))?;
    }
    finish(report, t0, c.out.as_deref())?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Certificate(failures))
    }
}

fn write_trace_csv(path: &Path, sets: &IndexSets, trace: &DynamicsTrace) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Usage(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec![
        "round".to_string(),
        "agent".into(),
        "utility".into(),
        "gap".into(),
    ];
    header.extend(sets.link_ids.iter().map(|l| format!("load_{l}")));
    w.write_record(&header).map_err(io)?;
    for s in &trace.steps {
        let mut row = vec![
            s.round.to_string(),
            s.agent_id.clone(),
            s.utility_after.to_string(),
            s.gap.map_or(String::new(), |g| g.to_string()),
        ];
        row.extend(s.loads.iter().map(f64::to_string));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn dynamics(a: &DynamicsArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let c = &a.common;
    let loaded = load(&c.instance, c.protocol)?;
    let game = Game::new(topology(&loaded.instance, c.extended, None)?);
    let sets = &game.topology().sets;
    let sol = oracle(sets, SolverOptions::default().kkt_tol)?;
    let init: Profile = match a.init {
        InitArg::Ne => construct_ne(&game, &sol, 1.0)?,
        InitArg::Zero => game.zero_profile(),
        InitArg::Random => random_profile(&game, &mut ChaCha8Rng::seed_from_u64(c.seed)),
    };
    let opts = DynamicsOptions {
        rounds: a.rounds,
        order: a.order.into(),
        seed: c.seed,
        ..DynamicsOptions::default()
    };
    let (trace, failure) = match run_dynamics(&game, init, &opts, Some(&sol.x)) {
        Ok(t) => (t, None),
        Err(EquilibriumError::Dynamics {
            round,
            agent,
            source,
            partial,
        }) => (
            *partial,
            Some(format!("round {round}, agent `{agent}`: {source}")),
        ),
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = &a.trace_csv {
        write_trace_csv(p, sets, &trace)?;
    }
    let last = trace
        .snapshots
        .last()
        .expect("initial snapshot is always present");
    let monotone = trace
        .steps
        .iter()
        .all(|s| s.utility_after >= s.utility_before - 1e-9 * (1.0 + s.utility_before.abs()));
    let gaps: Vec<Option<f64>> = trace.snapshots.iter().map(|s| s.gap).collect();
    let mut report = start("dynamics", &loaded, c.seed);
    report.passed = failure.is_none();
    report.oracle = Some(oracle_summary(sets, &sol));
    report.result = json!({
        "init": format!("{:?}", a.init).to_lowercase(),
        "order": format!("{:?}", a.order).to_lowercase(),
        "rounds_run": trace.rounds_run,
        "stopped_early": trace.stopped_early,
        "steps": trace.steps.len(),
        "monotone": monotone,
        "round_gaps": gaps,
        "final_gap": last.gap,
        "final_allocation": keyed(&sets.agent_ids, &last.allocation),
        "error": failure,
    });
    finish(report, t0, c.out.as_deref())?;
    match failure {
        Some(msg) => Err(CliError::Dynamics(msg)),
        None => Ok(()),
    }
}

/// Least-squares line through (n, total); returns slope, intercept and the
/// largest residual relative to the largest total.
fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let m = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let den = m * sxx - sx * sx;
    let slope = if den != 0.0 {
        (m * sxy - sx * sy) / den
    } else {
        0.0
    };
    let intercept = (sy - slope * sx) / m;
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let worst = points
        .iter()
        .map(|&(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    (
        slope,
        intercept,
        if scale > 0.0 { worst / scale } else { 0.0 },
    )
}

pub fn dims(a: &DimsArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let mut report = RunReport::new("dims");
    if !a.family.is_empty() {
        let protocol: Protocol = a.protocol.map_or(Protocol::Utp, Into::into);
        report.protocol = Some(protocol.to_string());
        let mut rows = Vec::new();
        let mut points = Vec::new();
        let mut all_match = true;
        for &n in &a.family {
            let inst = path_family(protocol, n);
            let game = Game::new(topology(&inst, a.extended, None)?);
            let d = dimensions(&game);
            all_match &= d.matches() && d.total == d.formula_total;
            points.push((n as f64, d.total as f64));
            rows.push(json!({ "n": n, "total": d.total, "formula_total": d.formula_total }));
        }
        let (slope, intercept, rel) = linear_fit(&points);
        report.passed = all_match;
        report.result = json!({
            "family": "path",
            "sizes": rows,
            "slope": slope,
            "intercept": intercept,
            "relative_residual": rel,
        });
        return finish(report, t0, a.out.as_deref());
    }
    let path = a
        .instance
        .as_deref()
        .expect("clap requires --instance without --family");
    let loaded = load(path, a.protocol)?;
    let game = Game::new(topology(&loaded.instance, a.extended, None)?);
    let sets = &game.topology().sets;
    let d = dimensions(&game);
    let agents: Map<String, Value> = sets
        .agent_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            (
                id.clone(),
                json!({ "enumerated": d.per_agent[i], "formula": d.formula[i] }),
            )
        })
        .collect();
    report.instance_digest = Some(loaded.digest);
    report.protocol = Some(loaded.instance.protocol.to_string());
    report.passed = d.matches();
    report.result = json!({
        "agents": agents,
        "total": d.total,
        "formula_total": d.formula_total,
        "matches": d.matches(),
    });
    finish(report, t0, a.out.as_deref())
}

pub fn validate(a: &InstanceArgs) -> Result<(), CliError> {
    let t0 = Instant::now();
    let loaded = load(&a.instance, a.protocol)?;
    let links = validate_instance(&loaded.instance)?;
    let probe = Topology::build(
        &loaded.instance,
        TopologyOptions {
            extended: a.extended,
            unchecked: true,
            ..TopologyOptions::default()
        },
    )?;
    let sets = &probe.sets;
    let connected = link_users_connected(&probe.tree, sets);
    let leaders: Vec<Value> = probe
        .leaders
        .violations
        .iter()
        .map(|&(k, l)| json!({ "group": sets.group_ids[k], "link": sets.link_ids[l] }))
        .collect();
    let checked = topology(&loaded.instance, a.extended, None);
    let mut report = start("validate", &loaded, a.seed);
    report.passed = checked.is_ok();
    report.result = json!({
        "violations": links.violations,
        "users_connected": sets.link_ids.iter().zip(&connected)
            .map(|(l, &ok)| (l.clone(), json!(ok))).collect::<Map<_, _>>(),
        "leader_violations": leaders,
        "extended": a.extended,
    });
    finish(report, t0, a.out.as_deref())?;
    checked.map(|_| ())
}
