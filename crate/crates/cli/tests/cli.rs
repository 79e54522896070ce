use std::path::Path;
use std::process::{Command, Output};

fn nilmcx(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_nilmcx"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "nilmcx {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

const THREE: &str = r#"{"appliances": [
  {"name": "a", "states_w": [0, 10]},
  {"name": "b", "states_w": [0, 20]},
  {"name": "c", "states_w": [0, 35]}
]}"#;

const HOUSE: &str = r#"{"appliances": [
  {"name": "fridge", "states_w": [0, 150]},
  {"name": "kettle", "states_w": [0, 1800]},
  {"name": "oven", "states_w": [0, 800, 2200]}
]}"#;

#[test]
fn enumerate_and_set_complexity() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("three.json"), THREE).unwrap();
    let o = nilmcx(d.path(), &["enumerate", "--appliances", "three.json", "--out", "values.csv"]);
    assert_eq!(stdout(&o).trim(), "8");
    let values = std::fs::read_to_string(d.path().join("values.csv")).unwrap();
    assert_eq!(values.lines().count(), 9);
    assert!(values.contains("\n65,1\n"));

    let o = nilmcx(
        d.path(),
        &["set-complexity", "--appliances", "three.json", "--sigma", "0.5", "--out", "spectrum.csv", "--summary", "s.json"],
    );
    let s = json(&o);
    assert_eq!(s["m"], 8);
    assert!((s["mean"].as_f64().unwrap() - 0.875).abs() < 1e-3);
    assert!((s["max"].as_f64().unwrap() - 1.0).abs() < 1e-3);
    let text = std::fs::read_to_string(d.path().join("spectrum.csv")).unwrap();
    assert!(text.starts_with("# sigma: 0.5\n"));

    let o = nilmcx(d.path(), &["report", "spectrum", "--input", "three=spectrum.csv", "--format", "json"]);
    let r = json(&o);
    assert_eq!(r["rows"][0]["label"], "three");
    assert!((r["rows"][0]["mean"].as_f64().unwrap() - 0.875).abs() < 1e-3);

    let o = nilmcx(d.path(), &["report", "colormap", "--spectrum", "three=spectrum.csv"]);
    assert!(stdout(&o).contains("# raw_max:"));
}

#[test]
fn bad_appliance_file_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.json"), r#"{"appliances": [{"name": "x", "states_w": [5, 10]}]}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nilmcx"))
        .current_dir(d.path())
        .args(["enumerate", "--appliances", "bad.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("off state"));
}

#[test]
fn synth_detect_disaggregate_score_report() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("house.json"), HOUSE).unwrap();
    nilmcx(
        p,
        &["synth", "--appliances", "house.json", "--samples", "7200", "--noise", "5", "--seed", "3", "--out", "trace.csv"],
    );

    let o = nilmcx(p, &["detect", "--trace", "trace.csv", "--mode", "submetered", "--out", "detected.json"]);
    assert_eq!(stdout(&o).trim(), "3 appliances");
    let detected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("detected.json")).unwrap()).unwrap();
    assert!(detected["provenance"]["config_hashes"]["detection"].is_string());
    assert_eq!(detected["config"]["edge_threshold"], 25.0);

    let o = nilmcx(p, &["set-complexity", "--appliances", "detected.json", "--out", "spectrum.csv"]);
    assert_eq!(json(&o)["m"], 12);

    let o = nilmcx(p, &["ts-complexity", "--trace", "trace.csv", "--appliances", "detected.json", "--out", "ct.csv"]);
    let with_meta = json(&o);
    assert_eq!(with_meta["metadata_free"], false);
    assert_eq!(with_meta["samples"], 7200);
    let o = nilmcx(p, &["ts-complexity", "--trace", "trace.csv", "--out", "ct_hist.csv"]);
    assert_eq!(json(&o)["metadata_free"], true);

    nilmcx(
        p,
        &["disaggregate", "--trace", "trace.csv", "--appliances", "detected.json", "--particles", "300", "--out", "result.json"],
    );
    let o = nilmcx(p, &["score", "--result", "result.json", "--trace", "trace.csv", "--out", "table.csv"]);
    assert!(stdout(&o).starts_with("mean relative energy error"));
    let table = std::fs::read_to_string(p.join("table.csv")).unwrap();
    assert!(table.contains("run,total,"));

    let o = nilmcx(p, &["report", "colormap", "--ct", "house=ct.csv", "--format", "json"]);
    assert_eq!(json(&o)["columns"].as_array().unwrap().len(), 7200);

    let unscored = Command::new(env!("CARGO_BIN_EXE_nilmcx"))
        .current_dir(p)
        .args(["report", "energy", "--result", "house=result.json", "--ac", "house=spectrum.csv", "--tc", "house=ct.csv"])
        .output()
        .unwrap();
    assert!(!unscored.status.success(), "unscored result must be refused");

    nilmcx(
        p,
        &["score", "--result", "result.json", "--trace", "trace.csv", "--out", "t.csv", "--scored", "scored.json"],
    );
    let o = nilmcx(
        p,
        &["report", "energy", "--result", "house=scored.json", "--ac", "house=spectrum.csv", "--tc", "house=ct.csv"],
    );
    let csv = stdout(&o);
    assert!(csv.starts_with("label,appliance,real_kwh,estimated_kwh,ac_mean,ac_max,tc_mean,tc_max\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("house,")).count(), 4);

    let no_tc = Command::new(env!("CARGO_BIN_EXE_nilmcx"))
        .current_dir(p)
        .args(["report", "energy", "--result", "house=scored.json", "--ac", "house=spectrum.csv"])
        .output()
        .unwrap();
    assert!(!no_tc.status.success());
}

#[test]
fn demo_is_repeatable() {
    let d = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec!["demo", "--out", out, "--samples", "1800", "--particles", "200"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()
    };
    for out in ["a", "b"] {
        let a = args(out);
        nilmcx(d.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    for f in ["energy_table.csv", "spectrum.csv", "ct.csv", "summary.json", "trace.csv"] {
        let a = std::fs::read(d.path().join("a").join(f)).unwrap();
        let b = std::fs::read(d.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
