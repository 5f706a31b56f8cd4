use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn slq(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slq"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    k.sort();
    k
}

#[test]
fn solve_writes_certificate_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = slq(&["solve", "--scenario", &scenario("scalar.toml")], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&dir.path().join("certificate.json"));
    assert_eq!(
        keys(&cert),
        [
            "gain_sup",
            "iterations",
            "kind",
            "kmin",
            "lambda",
            "method",
            "nullity",
            "pmin",
            "range_defect",
            "reason",
            "residual",
            "schema",
            "steps",
            "truncation_estimate",
            "value",
            "witness"
        ]
    );
    assert_eq!(cert["schema"], 1);
    assert_eq!(cert["kind"], "StronglyRegular");
    assert!((cert["value"].as_f64().unwrap() - 0.5).abs() < 1e-8);
    let csv = std::fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "time,P_0_0,K_0_0,L_0_0,theta_0_0");
    assert_eq!(csv.lines().count(), 202);
}

#[test]
fn solve_on_several_grids_writes_grid_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = slq(
        &["solve", "--scenario", &scenario("scalar.toml"), "--grids", "50,100"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let grids = std::fs::read_to_string(dir.path().join("grids.csv")).unwrap();
    assert_eq!(grids.lines().count(), 3);
    assert_eq!(json(&dir.path().join("certificate.json"))["steps"], 100);
}

#[test]
fn indefinite_solve_is_rejected_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = slq(&["solve", "--scenario", &scenario("indefinite.toml")], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let cert = json(&dir.path().join("certificate.json"));
    assert_eq!(cert["kind"], "EvidenceAgainst");
    assert_eq!(cert["witness"]["node"], 0);
    assert!(cert["witness"]["lambda_min"].as_f64().unwrap() < 0.0);
}

#[test]
fn simulate_writes_one_row_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = slq(
        &[
            "simulate",
            "--scenario",
            &scenario("classical.toml"),
            "--paths",
            "50",
            "--dump-trajectories",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let ens = std::fs::read_to_string(dir.path().join("ensemble.csv")).unwrap();
    assert_eq!(ens.lines().next().unwrap(), "path,cost,x_0,x_1,x_2");
    assert_eq!(ens.lines().count(), 51);
    let cost = json(&dir.path().join("cost.json"));
    assert_eq!(
        keys(&cost),
        [
            "discretization",
            "exact",
            "mean",
            "n_paths",
            "policy",
            "schema",
            "stderr",
            "value"
        ]
    );
    assert_eq!(cost["n_paths"], 50);
    let states = std::fs::read_to_string(dir.path().join("states.csv")).unwrap();
    assert_eq!(states.lines().count(), 1 + 50 * 101 * 3);
}

#[test]
fn zero_control_cost_matches_moment_equations() {
    let dir = tempfile::tempdir().unwrap();
    let out = slq(
        &[
            "simulate",
            "--scenario",
            &scenario("scalar.toml"),
            "--paths",
            "10",
            "--zero-control",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let cost = json(&dir.path().join("cost.json"));
    assert_eq!(cost["policy"], "zero");
    assert!((cost["exact"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((cost["mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn verify_passes_and_injected_bias_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "verify",
        "--scenario",
        &scenario("classical.toml"),
        "--paths",
        "4000",
        "--perturbations",
        "2",
        "--perturbation-paths",
        "1000",
    ];
    let ok = slq(&common, dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(
        keys(&report),
        [
            "all_ok",
            "bias",
            "mc_mean",
            "n_paths",
            "perturbations",
            "schema",
            "stderr",
            "value",
            "value_ok",
            "z"
        ]
    );
    assert_eq!(report["perturbations"].as_array().unwrap().len(), 2);

    let mut biased = common.to_vec();
    biased.extend(["--inject-bias", "0.5"]);
    let bad = slq(&biased, dir.path());
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn convexity_exit_codes_follow_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let ok = slq(&["convexity", "--scenario", &scenario("as34.toml")], dir.path());
    assert_eq!(ok.status.code(), Some(0));
    let report = json(&dir.path().join("convexity.json"));
    assert_eq!(
        keys(&report),
        [
            "c0_estimate",
            "certificates",
            "details",
            "hessian_lambda_min",
            "lambda",
            "schema",
            "verdict",
            "witness"
        ]
    );
    let witnesses: Vec<&str> = report["certificates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["witness"].as_str().unwrap())
        .collect();
    assert_eq!(witnesses, ["Riccati", "AS34"]);

    let against = slq(&["convexity", "--scenario", &scenario("indefinite.toml")], dir.path());
    assert_eq!(against.status.code(), Some(2));
    assert_eq!(json(&dir.path().join("convexity.json"))["verdict"], "EvidenceAgainst");
}

#[test]
fn refine_validates_dims() {
    let dir = tempfile::tempdir().unwrap();
    let heat = scenario("heat8.toml");
    for dims in ["4", "4,2", "2,9", "0,2"] {
        let out = slq(&["refine", "--scenario", &heat, "--dims", dims], dir.path());
        assert_eq!(out.status.code(), Some(1), "dims {dims}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
    }
    let out = slq(
        &["refine", "--scenario", &heat, "--dims", "2,8", "--full-path"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let path = std::fs::read_to_string(dir.path().join("refine_path.csv")).unwrap();
    assert_eq!(path.lines().count(), 1 + 2 * 101);
}

#[test]
fn faults_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = slq(&["solve", "--scenario", "/nonexistent/scenario.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n = 2\n").unwrap();
    let parse = slq(&["solve", "--scenario", bad.to_str().unwrap()], dir.path());
    assert_eq!(parse.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&parse.stderr).starts_with("error:"));
}
