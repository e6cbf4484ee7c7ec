mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture_path;
use serde_json::Value;

fn dlmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlmc"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn validate_rejects_the_cycle() {
    let o = dlmc(&["validate", "--feeder", p(&fixture_path("cyclic"))]);
    assert_eq!(o.status.code(), Some(11));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "validation");
    assert!(e["message"].as_str().unwrap().contains("cycle"));
}

#[test]
fn validate_reports_the_feeder() {
    let v = stdout_json(&dlmc(&[
        "validate",
        "--feeder",
        p(&fixture_path("feeder15")),
    ]));
    assert_eq!(v["valid"], true);
    assert_eq!(v["lines"], 14);
    assert_eq!(v["transformers"][0], "sub-n1");
}

#[test]
fn error_classes_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dlmc(&["validate", "--feeder", p(&dir.path().join("none.json"))]);
    assert_eq!(missing.status.code(), Some(14));
    assert_eq!(stderr_json(&missing)["error"], "io");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let parse = dlmc(&["validate", "--feeder", p(&bad)]);
    assert_eq!(parse.status.code(), Some(10));
    assert_eq!(stderr_json(&parse)["error"], "parse");

    let mut v: Value =
        serde_json::from_str(&fs::read_to_string(fixture_path("two_node")).unwrap()).unwrap();
    v["nodes"][1]["v_min"] = 1.02.into();
    let infeasible = dir.path().join("tight.json");
    fs::write(&infeasible, v.to_string()).unwrap();
    let o = dlmc(&[
        "solve",
        "--feeder",
        p(&infeasible),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(12));
    assert_eq!(stderr_json(&o)["error"], "infeasible");

    let o = dlmc(&[
        "solve",
        "--feeder",
        p(&fixture_path("two_node")),
        "--out",
        p(dir.path()),
        "--backend",
        "gurobi",
    ]);
    assert_eq!(o.status.code(), Some(11));
}

#[test]
fn dlmc_writes_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let v = stdout_json(&dlmc(&[
        "dlmc",
        "--feeder",
        p(&fixture_path("feeder15")),
        "--out",
        p(&out),
    ]));
    assert_eq!(v["status"], "optimal");
    assert_eq!(v["reconciliation"]["flagged"], 0);
    for name in [
        "solve_report.json",
        "operating_point.csv",
        "sensitivities.csv",
        "dlmc.csv",
        "reconciliation.csv",
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let table = fs::read_to_string(out.join("dlmc.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "node,period,kind,substation,real_loss,reactive_loss,voltage,ampacity,transformer,total,solver_dual,gap"
    );
    assert_eq!(lines.count(), 14 * 24 * 2);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("solve_report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["status"], "optimal");
    assert!(report["solver"].get("solve_time_s").is_none());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let feeder = fixture_path("chain6");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        stdout_json(&dlmc(&["dlmc", "--feeder", p(&feeder), "--out", p(out)]));
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in names {
        assert_eq!(
            fs::read(a.join(&n)).unwrap(),
            fs::read(b.join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"horizon_end": "extended:4", "solver": {"max_iter": 150}}"#,
    )
    .unwrap();
    let feeder = fixture_path("two_node");
    let v = stdout_json(&dlmc(&[
        "solve",
        "--feeder",
        p(&feeder),
        "--out",
        p(dir.path()),
        "--config",
        p(&cfg),
    ]));
    assert_eq!(v["horizon_end"], "extended:4");
    let v = stdout_json(&dlmc(&[
        "solve",
        "--feeder",
        p(&feeder),
        "--out",
        p(dir.path()),
        "--config",
        p(&cfg),
        "--horizon-end",
        "cycle",
    ]));
    assert_eq!(v["horizon_end"], "cycle");

    fs::write(&cfg, r#"{"horizon": "cycle"}"#).unwrap();
    let o = dlmc(&[
        "solve",
        "--feeder",
        p(&feeder),
        "--out",
        p(dir.path()),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(o.status.code(), Some(10));
}

#[test]
fn thermal_sim_reads_a_profile() {
    let dir = tempfile::tempdir().unwrap();
    let prof = dir.path().join("p.csv");
    fs::write(&prof, "period,l\n1,0.1\n2,0.3\n3,0.3\n").unwrap();
    let o = dlmc(&[
        "thermal-sim",
        "--feeder",
        p(&fixture_path("two_node")),
        "--load-profile",
        p(&prof),
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(
        rows[0],
        "period,l,top_oil,hotspot,faa_exact,faa_piecewise,cumulative_lol"
    );
    assert_eq!(rows.len(), 4);
    assert!(rows[2].starts_with("2,3.00000000000e-1,"));

    let out = dir.path().join("t");
    let v = stdout_json(&dlmc(&[
        "thermal-sim",
        "--feeder",
        p(&fixture_path("two_node")),
        "--load-profile",
        p(&prof),
        "--out",
        p(&out),
    ]));
    assert_eq!(v["transformer"], "xf");
    assert_eq!(fs::read_to_string(out.join("thermal.csv")).unwrap(), text);
}

#[test]
fn sensitivities_with_fd_check() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&dlmc(&[
        "sensitivities",
        "--feeder",
        p(&fixture_path("chain6")),
        "--out",
        p(dir.path()),
        "--fd-check",
    ]));
    assert_eq!(v["systems"], 2 * 5 * 6);
    assert!(v["fd_max_error"].as_f64().unwrap() <= 1e-4);
    let text = fs::read_to_string(dir.path().join("sensitivities.csv")).unwrap();
    assert!(text.starts_with("period,site,kind,quantity,element,value,fd_value,fd_error\n"));
    // Per system: 4 quantities on each of 5 lines plus P0 and Q0.
    assert_eq!(text.lines().count(), 1 + 60 * 22);
}

#[test]
fn pf_writes_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&dlmc(&[
        "pf",
        "--feeder",
        p(&fixture_path("feeder15")),
        "--out",
        p(dir.path()),
    ]));
    assert!(v["max_residual"].as_f64().unwrap() <= 1e-10);
    let text = fs::read_to_string(dir.path().join("operating_point.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 15 * 24);
}
