//! Acceptance gate. Runs every criterion at its stated tolerance, prints one
//! line per criterion and exits nonzero if any fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use dmd_core::equilibrium::{
    audit_ne_properties, construct_ne, deviation_fuzz, random_profile, run_dynamics, verify_ne,
    DynamicsOptions, EquilibriumError,
};
use dmd_core::generate::{
    disconnected_mmtp_instance, disconnected_utp_instance, path_family, random_mmtp_instance,
    random_utp_instance,
};
use dmd_core::instance::derive_index_sets;
use dmd_core::mechanism::{dimensions, own_hessian, Coord, TopologyError};
use dmd_core::oracle::{brute_force_solve, lipschitz_bound, solve};
use dmd_core::{
    CentralSolution, Game, Mechanism, ProblemInstance, Protocol, SolverOptions, Topology,
    TopologyOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const SEED: u64 = 20_240_917;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn instance_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../instances")
        .join(name)
}

fn dmd(args: &[&str]) -> (Option<i32>, Value, Duration) {
    let t0 = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_dmd"))
        .args(args)
        .output()
        .expect("binary runs");
    let elapsed = t0.elapsed();
    let v = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code(), v, elapsed)
}

fn game(inst: &ProblemInstance, extended: bool) -> Result<Game, TopologyError> {
    let opts = TopologyOptions {
        extended,
        ..TopologyOptions::default()
    };
    Ok(Game::new(Topology::build(inst, opts)?))
}

fn oracle(g: &Game) -> CentralSolution {
    solve(&g.topology().sets, &SolverOptions::default()).expect("oracle converges")
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// 50 unicast and 50 multicast instances satisfying both assumptions.
fn random_suite() -> Vec<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut out = Vec::new();
    for _ in 0..50 {
        let n = rng.random_range(3..=8);
        let links = rng.random_range(1..=4);
        out.push(random_utp_instance(&mut rng, n, links));
    }
    for _ in 0..50 {
        let groups = rng.random_range(2..=3);
        let links = rng.random_range(1..=3);
        out.push(random_mmtp_instance(&mut rng, groups, links, 8));
    }
    out
}

struct Built {
    game: Game,
    sol: CentralSolution,
    profile: dmd_core::Profile,
}

fn build_suite(suite: &[ProblemInstance]) -> Vec<Built> {
    suite
        .iter()
        .map(|inst| {
            let g = game(inst, false).expect("generated instances satisfy the assumptions");
            let sol = oracle(&g);
            let profile = construct_ne(&g, &sol, 1.0).expect("construction succeeds");
            Built {
                game: g,
                sol,
                profile,
            }
        })
        .collect()
}

fn c1_golden_solve() -> Verdict {
    let path = instance_file("three_agent.json");
    let (code, r, elapsed) = dmd(&["solve", "--instance", path.to_str().unwrap()]);
    let x = &r["oracle"]["x"];
    let xs: Vec<f64> = ["1", "2", "3"]
        .iter()
        .map(|id| x[*id].as_f64().unwrap_or(f64::NAN))
        .collect();
    let dx = gap(&xs, &[1.0 / 6.0, 1.0 / 3.0, 0.5]);
    let dl = (r["oracle"]["lambda"]["l1"].as_f64().unwrap_or(f64::NAN) - 6.0).abs();
    let ok = code == Some(0) && dx <= 1e-5 && dl <= 1e-3 && elapsed < Duration::from_secs(1);
    verdict(
        ok,
        format!(
            "|x - x*| = {dx:.1e}, |lambda - 6| = {dl:.1e}, {} ms",
            elapsed.as_millis()
        ),
    )
}

fn c2_scale_family() -> Verdict {
    let path = instance_file("three_agent.json");
    let x_star = [1.0 / 6.0, 1.0 / 3.0, 0.5];
    let mut worst: f64 = 0.0;
    let mut allocations: Vec<Vec<f64>> = Vec::new();
    let mut ok = true;
    for k in [0.5, 1.0, 2.0, 10.0] {
        let ks = k.to_string();
        let (code, r, _) = dmd(&["ne", "--instance", path.to_str().unwrap(), "--scale", &ks]);
        ok &= code == Some(0);
        let res = &r["result"];
        let mut alloc = Vec::new();
        for (i, id) in ["1", "2", "3"].iter().enumerate() {
            let y = res["profile"][id]["y"].as_f64().unwrap_or(f64::NAN);
            let p = res["profile"][id]["p"]["l1"].as_f64().unwrap_or(f64::NAN);
            let t = res["taxes"][id].as_f64().unwrap_or(f64::NAN);
            worst = worst
                .max((y - k * x_star[i]).abs())
                .max((p - 6.0).abs())
                .max((t - (i as f64 + 1.0)).abs());
            alloc.push(res["allocation"][id].as_f64().unwrap_or(f64::NAN));
        }
        let residual = r["certificate"]["first_order"]["max_residual"]
            .as_f64()
            .unwrap_or(f64::INFINITY);
        ok &= residual <= 1e-6;
        allocations.push(alloc);
    }
    let spread = allocations
        .iter()
        .map(|a| gap(a, &allocations[0]))
        .fold(0.0, f64::max);
    ok &= worst <= 1e-6 && spread <= 1e-12;
    verdict(
        ok,
        format!("k in {{0.5,1,2,10}}: max deviation {worst:.1e}, allocation spread {spread:.1e}"),
    )
}

fn c3_full_implementation(built: &[Built], elapsed: Duration) -> Verdict {
    let mut worst_res: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for b in built {
        let rep = verify_ne(&b.game, &b.profile, 1e-6).expect("verification runs");
        worst_res = worst_res.max(rep.max_residual);
        let x: Vec<f64> = b
            .game
            .outcomes(&b.profile)
            .expect("outcomes")
            .iter()
            .map(|o| o.allocation)
            .collect();
        worst_gap = worst_gap.max(gap(&x, &b.sol.x));
    }
    let ok = worst_res <= 1e-6 && worst_gap <= 1e-4 && elapsed < Duration::from_secs(120);
    verdict(
        ok,
        format!(
            "100 instances: max residual {worst_res:.1e}, max efficiency gap {worst_gap:.1e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c4_deviations(built: &[Built]) -> Verdict {
    let mut worst: f64 = 0.0;
    for (t, b) in built.iter().enumerate() {
        let rep =
            deviation_fuzz(&b.game, &b.profile, 1000, 0.5, SEED + t as u64).expect("fuzz runs");
        worst = worst.max(rep.max_gain);
    }
    verdict(
        worst <= 1e-7,
        format!("100 x 1000 deviations: max gain {worst:.1e}"),
    )
}

fn c5_audits(built: &[Built]) -> Verdict {
    let mut failed = Vec::new();
    let mut items = 0;
    for (t, b) in built.iter().enumerate() {
        let audits =
            audit_ne_properties(&b.game, &b.profile, Some(&b.sol), 1e-6).expect("audits run");
        items += audits.len();
        failed.extend(
            audits
                .iter()
                .filter(|a| !a.passed)
                .map(|a| format!("#{t} {} = {:.1e}", a.name, a.residual)),
        );
    }
    let detail = if failed.is_empty() {
        format!("{items} audit items over 100 instances")
    } else {
        format!(
            "{} failed: {}",
            failed.len(),
            failed[..failed.len().min(3)].join(", ")
        )
    };
    verdict(failed.is_empty(), detail)
}

fn c6_concavity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut report = Vec::new();
    let mut ok = true;
    for protocol in [Protocol::Utp, Protocol::Mmtp] {
        let mut max_diag = f64::NEG_INFINITY;
        let mut max_off: (f64, String) = (0.0, String::new());
        for _ in 0..20 {
            let inst = match protocol {
                Protocol::Utp => random_utp_instance(&mut rng, 5, 2),
                Protocol::Mmtp => random_mmtp_instance(&mut rng, 3, 2, 6),
            };
            let g = game(&inst, false).expect("valid instance");
            let p = random_profile(&g, &mut rng);
            let sets = &g.topology().sets;
            for i in 0..sets.n_agents() {
                let h = own_hessian(&g, &p, i, 1e-4).expect("hessian");
                let coords: Vec<Coord> = g.coords(i);
                for a in 0..h.len() {
                    max_diag = max_diag.max(h[a][a]);
                    for b in a + 1..h.len() {
                        if h[a][b].abs() > max_off.0 {
                            max_off = (
                                h[a][b].abs(),
                                format!("{}/{}", coords[a].label(sets), coords[b].label(sets)),
                            );
                        }
                    }
                }
            }
        }
        let pass = max_diag < 0.0 && max_off.0 <= 1e-6;
        ok &= pass;
        report.push(format!(
            "{protocol}: max diagonal {max_diag:.2}, max |off-diagonal| {:.1e}{}",
            max_off.0,
            if pass {
                String::new()
            } else {
                format!(" at {}", max_off.1)
            }
        ));
    }
    verdict(ok, report.join("; "))
}

fn c7_locality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7);
    let mut checks = 0usize;
    let mut broken = 0usize;
    for t in 0..20 {
        let inst = if t % 2 == 0 {
            random_utp_instance(&mut rng, 7, 3)
        } else {
            random_mmtp_instance(&mut rng, 3, 3, 8)
        };
        let g = game(&inst, false).expect("valid instance");
        let p = random_profile(&g, &mut rng);
        let n = g.topology().n_agents();
        for i in 0..n {
            let base = g.outcome(&p, i).expect("outcome");
            for j in 0..n {
                if j == i || g.topology().dir.neighbors[i].contains(&j) {
                    continue;
                }
                let mut q = p.clone();
                for v in q.messages[j].iter_mut() {
                    *v = rng.random_range(0.05..=1.0);
                }
                let o = g.outcome(&q, i).expect("outcome");
                checks += 1;
                if o.allocation.to_bits() != base.allocation.to_bits()
                    || o.tax_total.to_bits() != base.tax_total.to_bits()
                {
                    broken += 1;
                }
            }
        }
    }
    verdict(
        broken == 0 && checks > 0,
        format!("{checks} non-neighbor perturbations, {broken} changed an outcome"),
    )
}

fn c8_oracle() -> Verdict {
    let step = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let mut worst_ratio: f64 = 0.0;
    let mut ok = true;
    for t in 0..10 {
        let inst = if t % 2 == 0 {
            let n = rng.random_range(2..=3);
            let links = rng.random_range(1..=2);
            random_utp_instance(&mut rng, n, links)
        } else {
            random_mmtp_instance(&mut rng, 2, 1, 3)
        };
        let sets = derive_index_sets(&inst).expect("valid instance");
        let sol = solve(&sets, &SolverOptions::default()).expect("oracle converges");
        let grid = brute_force_solve(&sets, step).expect("grid search runs");
        let bound = 2.0 * step * lipschitz_bound(&sets, &sol.x);
        let diff = (sol.objective - grid.objective).abs();
        ok &= diff <= bound;
        worst_ratio = worst_ratio.max(diff / bound);
    }
    verdict(
        ok,
        format!("10 instances: max |gap| / bound = {worst_ratio:.3}"),
    )
}

fn c9_dimensions() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    let mut mismatches = 0;
    for t in 0..40 {
        let inst = if t < 20 {
            let n = rng.random_range(3..=12);
            let links = rng.random_range(1..=4);
            random_utp_instance(&mut rng, n, links)
        } else {
            let groups = rng.random_range(2..=4);
            let links = rng.random_range(1..=3);
            random_mmtp_instance(&mut rng, groups, links, 12)
        };
        let d = dimensions(&game(&inst, false).expect("valid instance"));
        if !d.matches() || d.total != d.formula_total {
            mismatches += 1;
        }
    }
    let mut fits = Vec::new();
    let mut ok = mismatches == 0;
    for proto in ["utp", "mmtp"] {
        let (code, r, _) = dmd(&["dims", "--family", "10,20,40,80", "--protocol", proto]);
        let rel = r["result"]["relative_residual"]
            .as_f64()
            .unwrap_or(f64::INFINITY);
        let slope = r["result"]["slope"].as_f64().unwrap_or(f64::NAN);
        ok &= code == Some(0) && r["passed"] == Value::Bool(true) && rel < 1e-12;
        fits.push(format!("{proto} slope {slope:.3} residual {rel:.1e}"));
    }
    // Cross-check the family totals against direct enumeration.
    for protocol in [Protocol::Utp, Protocol::Mmtp] {
        for n in [10, 20, 40, 80] {
            let d = dimensions(&game(&path_family(protocol, n), false).expect("valid family"));
            ok &= d.matches();
        }
    }
    verdict(
        ok,
        format!(
            "40 random instances, {mismatches} mismatches; {}",
            fits.join(", ")
        ),
    )
}

fn c10_extended() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
    let mut ok = true;
    let mut worst_res: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut notes = Vec::new();
    let (mut steps, mut ended) = (0, 0);
    for t in 0..10 {
        let inst = if t % 2 == 0 {
            let n = rng.random_range(4..=7);
            let links = rng.random_range(2..=3);
            disconnected_utp_instance(&mut rng, n, links)
        } else {
            disconnected_mmtp_instance(&mut rng)
        };
        // The instance must actually violate connectivity.
        if !matches!(game(&inst, false), Err(TopologyError::Assumption { .. })) {
            ok = false;
            notes.push(format!("#{t} satisfies the assumption"));
            continue;
        }
        let g = game(&inst, true).expect("extended topology builds");
        let sol = oracle(&g);
        let p = construct_ne(&g, &sol, 1.0).expect("construction succeeds");
        let rep = verify_ne(&g, &p, 1e-6).expect("verification runs");
        worst_res = worst_res.max(rep.max_residual);
        let x: Vec<f64> = g
            .outcomes(&p)
            .expect("outcomes")
            .iter()
            .map(|o| o.allocation)
            .collect();
        worst_gap = worst_gap.max(gap(&x, &sol.x));

        let fix = run_dynamics(&g, p, &DynamicsOptions::default(), Some(&sol.x)).expect("dynamics");
        if !(fix.stopped_early && fix.rounds_run == 1) {
            ok = false;
            notes.push(format!("#{t} not a fixpoint"));
        }
        let init = random_profile(&g, &mut rng);
        let opts = DynamicsOptions {
            rounds: 10,
            seed: SEED + t as u64,
            ..DynamicsOptions::default()
        };
        // A best-response error ends the trace; the completed steps still count.
        let tr = match run_dynamics(&g, init, &opts, Some(&sol.x)) {
            Ok(tr) => tr,
            Err(EquilibriumError::Dynamics { partial, .. }) => {
                ended += 1;
                *partial
            }
            Err(e) => panic!("dynamics: {e}"),
        };
        steps += tr.steps.len();
        if tr
            .steps
            .iter()
            .any(|s| s.utility_after < s.utility_before - 1e-9 * (1.0 + s.utility_before.abs()))
        {
            ok = false;
            notes.push(format!("#{t} best response lowered utility"));
        }
    }
    ok &= worst_res <= 1e-6 && worst_gap <= 1e-4;
    let mut detail = format!(
        "10 disconnected instances: max residual {worst_res:.1e}, max efficiency gap {worst_gap:.1e}, fixpoints held, {steps} monotone steps ({ended} traces ended by a best-response error)"
    );
    if !notes.is_empty() {
        detail.push_str(&format!(" ({})", notes.join(", ")));
    }
    verdict(ok, detail)
}

fn main() {
    let t0 = Instant::now();
    let suite = random_suite();
    let built = build_suite(&suite);
    let c3 = c3_full_implementation(&built, t0.elapsed());
    let t3 = t0.elapsed();
    let results = vec![
        ("1", "golden solve", c1_golden_solve()),
        ("2", "scale family", c2_scale_family()),
        ("3", "full implementation", {
            let mut v = c3;
            v.passed &= t3 < Duration::from_secs(120);
            v
        }),
        ("4", "deviation robustness", c4_deviations(&built)),
        ("5", "equilibrium audits", c5_audits(&built)),
        ("6", "own-message concavity", c6_concavity()),
        ("7", "locality", c7_locality()),
        ("8", "oracle vs grid", c8_oracle()),
        ("9", "dimensionality", c9_dimensions()),
        ("10", "extended mechanism", c10_extended()),
    ];
    let mut failed = 0;
    for (n, name, v) in &results {
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {n:>2} {name}: {}", v.detail);
        failed += usize::from(!v.passed);
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
