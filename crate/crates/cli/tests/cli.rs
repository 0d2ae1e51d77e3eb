use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn instance(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../instances")
        .join(name)
}

fn dmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad report ({e}): {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("elapsed_ms");
    v
}

#[test]
fn solve_reports_efficient_rates() {
    let path = instance("three_agent.json");
    let out = dmd(&["solve", "--instance", path.to_str().unwrap()]);
    assert!(out.status.success());
    let r = report(&out);
    let x = &r["oracle"]["x"];
    for (id, want) in [("1", 1.0 / 6.0), ("2", 1.0 / 3.0), ("3", 0.5)] {
        assert!((x[id].as_f64().unwrap() - want).abs() < 1e-9);
    }
    assert!((r["oracle"]["lambda"]["l1"].as_f64().unwrap() - 6.0).abs() < 1e-7);
    assert_eq!(r["instance_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn malformed_instance_exits_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"protocol\": \"utp\",\n  \"links\": [\n").unwrap();
    let out = dmd(&["solve", "--instance", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn disconnected_users_need_extended_mode() {
    let path = instance("disconnected_users.json");
    let out = dmd(&["solve", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--extended"));
    let out = dmd(&[
        "ne",
        "--instance",
        path.to_str().unwrap(),
        "--extended",
        "--fuzz",
        "200",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(report(&out)["passed"], Value::Bool(true));
}

#[test]
fn ne_taxes_do_not_depend_on_scale() {
    let path = instance("three_agent.json");
    let mut profiles = Vec::new();
    for k in ["1", "10"] {
        let out = dmd(&["ne", "--instance", path.to_str().unwrap(), "--scale", k]);
        assert!(out.status.success());
        let r = report(&out);
        for (id, want) in [("1", 1.0), ("2", 2.0), ("3", 3.0)] {
            let t = r["result"]["taxes"][id].as_f64().unwrap();
            assert!((t - want).abs() < 1e-6, "k = {k}: {t}");
        }
        profiles.push(r["result"]["profile"]["3"]["y"].as_f64().unwrap());
    }
    assert!((profiles[1] - 10.0 * profiles[0]).abs() < 1e-9);
}

#[test]
fn multicast_sample_certifies() {
    let path = instance("multicast_groups.json");
    let dir = tempfile::tempdir().unwrap();
    let prof = dir.path().join("profile.json");
    let out = dmd(&[
        "ne",
        "--instance",
        path.to_str().unwrap(),
        "--fuzz",
        "300",
        "--profile-out",
        prof.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let p: Value = serde_json::from_str(&std::fs::read_to_string(prof).unwrap()).unwrap();
    assert!(p["1"]["w"]["l"].is_number());
}

#[test]
fn ne_failure_names_the_check() {
    // Demand scale zero is rejected before any certificate exists.
    let path = instance("three_agent.json");
    let out = dmd(&["ne", "--instance", path.to_str().unwrap(), "--scale", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dynamics_from_equilibrium_is_a_fixpoint() {
    let path = instance("three_agent.json");
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let out = dmd(&[
        "dynamics",
        "--instance",
        path.to_str().unwrap(),
        "--init",
        "ne",
        "--trace-csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let r = report(&out);
    assert_eq!(r["result"]["rounds_run"], 1);
    assert_eq!(r["result"]["stopped_early"], true);
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "round,agent,utility,gap,load_l1");
    assert_eq!(lines.count(), 3);
}

#[test]
fn seeded_runs_are_reproducible() {
    let path = instance("three_agent.json");
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    for run in 0..2 {
        let csv = dir.path().join(format!("t{run}.csv"));
        let out = dmd(&[
            "dynamics",
            "--instance",
            path.to_str().unwrap(),
            "--init",
            "random",
            "--order",
            "random",
            "--seed",
            "7",
            "--rounds",
            "5",
            "--trace-csv",
            csv.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        let r = without_timing(report(&out));
        assert_eq!(r["result"]["monotone"], true);
        seen.push((r, std::fs::read(csv).unwrap()));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn dims_of_three_agent_example() {
    let path = instance("three_agent.json");
    let r = report(&dmd(&["dims", "--instance", path.to_str().unwrap()]));
    assert_eq!(r["result"]["total"], 13);
    for (id, want) in [("1", 6), ("2", 4), ("3", 3)] {
        assert_eq!(r["result"]["agents"][id]["enumerated"], want);
        assert_eq!(r["result"]["agents"][id]["formula"], want);
    }
}

#[test]
fn dims_family_fits_a_line() {
    for proto in ["utp", "mmtp"] {
        let out = dmd(&["dims", "--family", "10,20,40,80", "--protocol", proto]);
        assert!(out.status.success());
        let r = report(&out);
        assert_eq!(r["passed"], true);
        assert!(r["result"]["relative_residual"].as_f64().unwrap() < 1e-12);
        assert!(r["result"]["slope"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn validate_lists_disconnected_links() {
    let path = instance("disconnected_groups.json");
    let out = dmd(&["validate", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let r = report(&out);
    assert_eq!(r["result"]["users_connected"]["l1"], false);
    assert_eq!(r["result"]["users_connected"]["l2"], true);
    let out = dmd(&[
        "validate",
        "--instance",
        path.to_str().unwrap(),
        "--extended",
    ]);
    assert!(out.status.success());
}

#[test]
fn protocol_override_requires_groups() {
    let path = instance("three_agent.json");
    let out = dmd(&[
        "solve",
        "--instance",
        path.to_str().unwrap(),
        "--protocol",
        "mmtp",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
