use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn verify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_verify")).args(args).output().expect("binary runs")
}

fn json_out(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("verify-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn list_suites() {
    let out = verify(&["list-suites"]);
    assert!(out.status.success());
    let v = json_out(&out);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|s| s["id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 10);
    assert!(ids.contains(&"volume") && ids.contains(&"trace"));
    assert!(v.as_array().unwrap().iter().all(|s| !s["anchor"].as_str().unwrap().is_empty()));
}

#[test]
fn run_is_byte_stable_and_passes() {
    let a = scratch("a.json");
    let b = scratch("b.json");
    for path in [&a, &b] {
        let out = verify(&[
            "run", "--config", "CFG-B", "--suite", "coeffs", "--suite", "gauss", "--suite", "resolvents", "--seed", "4",
            "--out", path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ta = std::fs::read(&a).unwrap();
    assert_eq!(ta, std::fs::read(&b).unwrap());
    let v: Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(v["verdict"], "PASS");
    assert!(v["suites"].as_array().unwrap().iter().all(|s| s["verdict"] == "PASS" && s.get("wall_ms").is_none()));
}

#[test]
fn timings_are_opt_in() {
    let out = verify(&["run", "--config", "CFG-A", "--suite", "coeffs", "--timings"]);
    assert!(out.status.success());
    assert!(json_out(&out)["suites"][0]["wall_ms"].is_u64());
}

#[test]
fn config_files_load() {
    let path = configs_dir().join("cfg-d.json");
    let out = verify(&["run", "--config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_out(&out);
    assert_eq!(v["config"]["name"], "CFG-D");
    assert_eq!(v["suites"].as_array().unwrap().len(), 2);
}

#[test]
fn config_violations_are_rejected() {
    let bad = scratch("bad.json");
    std::fs::write(&bad, r#"{"p": 5, "e": 5, "f": 2, "N": 3}"#).unwrap();
    let out = verify(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p = 5 divides e f = 10"));

    let ok = scratch("e3.json");
    std::fs::write(&ok, r#"{"p": 5, "e": 3, "f": 2, "N": 3, "suites": ["psi-phi"]}"#).unwrap();
    let out = verify(&["run", "--config", ok.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let tower = scratch("tower.json");
    std::fs::write(&tower, r#"{"p": 5, "e": 4, "f": 1, "N": 3, "suites": ["volume"]}"#).unwrap();
    let out = verify(&["run", "--config", tower.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("e(p-1) = 16 does not divide p^f - 1 = 4"));
}

#[test]
fn witness_export_and_check() {
    let fx = scratch("witness.json");
    let out = verify(&["witness", "export", "--config", "CFG-B", "--l", "-1", "--coeff", "3", "--nu", "2", "--out", fx.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = verify(&["witness", "check", "--config", "CFG-B", "--file", fx.to_str().unwrap()]);
    assert!(out.status.success());
    let v = json_out(&out);
    assert_eq!(v["verified_mod"], 2);
    assert_eq!(v["lead"][0]["Exact"], -1);

    let text = std::fs::read_to_string(&fx).unwrap();
    let mut bad: Value = serde_json::from_str(&text).unwrap();
    let entry = bad["coeffs"].as_array_mut().unwrap().iter_mut().find(|c| c[0] == -1).unwrap();
    let first = entry[1][0].as_u64().unwrap();
    entry[1][0] = Value::from((first + 1) % 625);
    let broken = scratch("broken.json");
    std::fs::write(&broken, bad.to_string()).unwrap();
    let out = verify(&["witness", "check", "--config", "CFG-B", "--file", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_witness_is_an_error() {
    let out = verify(&["witness", "export", "--config", "CFG-B", "--l", "-3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such element"));
}

#[test]
fn gauss_table() {
    let out = verify(&["gauss", "table", "--p", "5", "--f", "2"]);
    assert!(out.status.success());
    let v = json_out(&out);
    assert_eq!(v["rows"].as_array().unwrap().len(), 24);
    assert_eq!(v["all_match"], true);
}

#[test]
fn resolvents_subcommand() {
    let out = verify(&["resolvents", "--p", "5", "--e", "4", "--f", "1", "--N", "4"]);
    assert!(out.status.success());
    assert_eq!(json_out(&out)["all_hold"], true);
}

#[test]
fn volume_subcommand() {
    let out = verify(&["volume", "--p", "5", "--e", "2", "--f", "2", "--orbit", "1,5", "--r", "1", "--N", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_out(&out);
    assert_eq!(v["verdict"], "PASS");
    let s: Vec<i64> = v["rows"].as_array().unwrap().iter().map(|r| r["scaling"].as_i64().unwrap()).collect();
    assert_eq!(s, vec![1, -1]);
    let out = verify(&["volume", "--p", "5", "--e", "2", "--f", "2", "--orbit", "2,2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_subcommand() {
    let out = verify(&["trace", "--level", "1"]);
    assert!(out.status.success());
    assert_eq!(json_out(&out)["suites"][0]["verdict"], "SKIPPED");
    let out = verify(&["trace", "--level", "1", "--slow"]);
    assert!(out.status.success());
    assert_eq!(json_out(&out)["suites"][0]["verdict"], "PASS");
    let out = verify(&["trace", "--level", "0", "--slow"]);
    assert_eq!(out.status.code(), Some(2));
    let out = verify(&["trace", "--level", "1", "--slow", "--p", "13"]);
    assert!(out.status.success());
    assert_eq!(json_out(&out)["suites"][0]["verdict"], "SKIPPED");
}
