mod common;

use common::{artifact_digests, gridlife, ok, run_pipeline, write_fixtures};

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        write_fixtures(d);
        run_pipeline(d);
    }
    let (da, db) = (artifact_digests(a.path()), artifact_digests(b.path()));
    assert!(da.len() > 30, "only {} artifacts", da.len());
    assert_eq!(da, db);
}

#[test]
fn manifests_list_inputs_and_artifacts() {
    let d = tempfile::tempdir().unwrap();
    write_fixtures(d.path());
    ok(d.path(), &["synth", "--config", "synth.json", "--out", "s/samples.csv"]);
    let text = std::fs::read_to_string(d.path().join("s/samples.csv.manifest.json")).unwrap();
    let m: gridlife::report::RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(m.command, "synth");
    assert_eq!(m.seeds["seed"], 1);
    assert!(m.config_hashes.contains_key("synth.json"));
    assert_eq!(
        m.artifacts["samples.csv"],
        gridlife::report::sha256_file(&d.path().join("s/samples.csv")).unwrap()
    );
    assert_eq!(m.timings_file.as_deref(), Some("samples.csv.timings.json"));
}

#[test]
fn seed_changes_the_output() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--out", "a.csv", "--seed", "1"]);
    ok(d.path(), &["synth", "--out", "b.csv", "--seed", "2"]);
    let read = |n: &str| std::fs::read(d.path().join(n)).unwrap();
    assert_ne!(read("a.csv"), read("b.csv"));
}

#[test]
fn exit_codes_follow_failure_classes() {
    let d = tempfile::tempdir().unwrap();
    write_fixtures(d.path());
    let code = |args: &[&str]| gridlife(d.path(), args).status.code();

    // configuration problems
    std::fs::write(d.path().join("bad.json"), r#"{ "n0_periods": 0 }"#).unwrap();
    assert_eq!(code(&["validate", "--config", "bad.json"]), Some(2));
    assert_eq!(code(&["dispatch", "--scenario", "day.csv", "--battery", "battery.json", "--theta", "-1,0,0,0", "--out", "x.json"]), Some(2));
    // data problems
    assert_eq!(code(&["train", "--samples", "missing.csv", "--out", "m.json"]), Some(3));
    std::fs::write(d.path().join("short.csv"), "t,pv_kw,load_kw,buy_price,sell_price\n0,0,abc,0.1,0.05\n").unwrap();
    assert_eq!(code(&["dispatch", "--scenario", "short.csv", "--battery", "battery.json", "--out", "x.json"]), Some(3));
    // infeasible dispatch: load beyond grid and battery supply
    std::fs::write(d.path().join("huge.csv"), "t,pv_kw,load_kw,buy_price,sell_price\n0,0,5000,0.1,0.05\n").unwrap();
    assert_eq!(code(&["dispatch", "--scenario", "huge.csv", "--battery", "battery.json", "--out", "x.json"]), Some(4));
    assert_eq!(code(&["synth", "--out", "ok.csv"]), Some(0));
}

#[test]
fn validate_reports_sell_above_buy_with_its_step() {
    let d = tempfile::tempdir().unwrap();
    let csv = "t,pv_kw,load_kw,buy_price,sell_price\n0,0,10,0.2,0.1\n1,0,10,0.2,0.3\n2,0,10,0.2,0.1\n";
    std::fs::write(d.path().join("day.csv"), csv).unwrap();
    let out = gridlife(d.path(), &["validate", "--scenario", "day.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("step 1"), "{err}");
}

#[test]
fn validate_names_available_quantiles() {
    let d = tempfile::tempdir().unwrap();
    write_fixtures(d.path());
    ok(d.path(), &["synth", "--config", "synth.json", "--out", "s.csv"]);
    for mode in ["cyclic", "calendar"] {
        let out = format!("{mode}.json");
        ok(d.path(), &["train", "--samples", "s.csv", "--mode", mode, "--params", "gbt.json", "--quantiles", "0.1,0.5,0.8", "--out", &out]);
    }
    let out = gridlife(
        d.path(),
        &["validate", "--config", "lifecycle.json", "--model-cyc", "cyclic.json", "--model-cal", "calendar.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0.9") && err.contains("[0.1, 0.5, 0.8]"), "{err}");
}

#[test]
fn report_lists_every_missing_input() {
    let d = tempfile::tempdir().unwrap();
    let out = gridlife(
        d.path(),
        &["report", "--compare", "nope/table.json", "--traces", "a.json,b.json", "--out", "rep"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["nope/table.json", "a.json", "b.json"] {
        assert!(err.contains(name), "{name} not in: {err}");
    }
    assert!(!d.path().join("rep").exists());
}

#[test]
fn predict_writes_sorted_quantiles_to_stdout() {
    let d = tempfile::tempdir().unwrap();
    write_fixtures(d.path());
    ok(d.path(), &["synth", "--config", "synth.json", "--out", "s.csv"]);
    ok(d.path(), &["train", "--samples", "s.csv", "--params", "gbt.json", "--out", "cyc.json"]);
    let out = ok(d.path(), &["predict", "--model", "cyc.json", "--features", "features.csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("capacity_kwh,temp_c,dod,p_chg_kw,p_dis_kw,q0.05"));
    for line in lines {
        let v: Vec<f64> = line.split(',').skip(5).map(|s| s.parse().unwrap()).collect();
        assert_eq!(v.len(), 7);
        assert!(v.windows(2).all(|w| w[0] <= w[1]), "{line}");
    }
}

#[test]
fn thread_variable_is_checked() {
    let d = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(common::bin())
        .current_dir(d.path())
        .args(["synth", "--out", "s.csv"])
        .env("GRIDLIFE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
