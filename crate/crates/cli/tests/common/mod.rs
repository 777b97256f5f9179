#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridlife::dispatch::{write_day_csv, BatterySpec, DayProfile};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gridlife")
}

/// Runs the CLI with `dir` as working directory.
pub fn gridlife(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin()).current_dir(dir).args(args).env("GRIDLIFE_THREADS", "2").output().expect("spawn gridlife")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = gridlife(dir, args);
    assert!(
        out.status.success(),
        "gridlife {args:?} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small input files shared by the CLI tests.
pub fn write_fixtures(dir: &Path) {
    let put = |name: &str, text: &str| std::fs::write(dir.join(name), text).unwrap();
    put("synth.json", r#"{ "n_samples": 700 }"#);
    put("gbt.json", r#"{ "n_rounds": 25 }"#);
    put("lifecycle.json", r#"{ "n0_periods": 6, "mc_paths": 3 }"#);
    put("pso.json", r#"{ "n_particles": 3, "n_iterations": 1 }"#);
    put("cells.json", r#"{ "cyclic_cycles": [5, 10], "calendar_days": [7, 10] }"#);
    let spec = BatterySpec { c_now_kwh: 800.0, ..BatterySpec::default() };
    put("battery.json", &serde_json::to_string_pretty(&spec).unwrap());
    write_day_csv(&dir.join("day.csv"), &DayProfile::default().day(1)).unwrap();
    put(
        "features.csv",
        "capacity_kwh,temp_c,dod,p_chg_kw,p_dis_kw\n900,35,0.5,200,250\n500,5,0.9,1200,900\n1200,50,0.1,50,60\n",
    );
}

/// Every subcommand once, chaining artifacts, with relative paths so two
/// runs in different directories see identical arguments.
pub fn run_pipeline(dir: &Path) {
    let models = ["--model-cyc", "m/cyc.json", "--model-cal", "m/cal.json"];
    let with_models = |mut args: Vec<&'static str>| {
        args.extend(models);
        args
    };
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--config", "synth.json", "--out", "s/samples.csv"],
        vec!["synth", "--raw-cells", "--config", "cells.json", "--out", "cells"],
        vec!["process-data", "--in", "cells", "--out", "s/processed.csv"],
        vec!["train", "--samples", "s/samples.csv", "--mode", "cyclic", "--params", "gbt.json", "--out", "m/cyc.json"],
        vec!["train", "--samples", "s/samples.csv", "--mode", "calendar", "--params", "gbt.json", "--out", "m/cal.json"],
        vec!["predict", "--model", "m/cyc.json", "--features", "features.csv", "--out", "p/pred.csv"],
        vec!["dispatch", "--scenario", "day.csv", "--battery", "battery.json", "--theta", "0.01,0,0,0", "--out", "d/single.json"],
        vec!["dispatch", "--scenario", "day.csv", "--battery", "battery.json", "--forecast-sigma", "0.05", "--out", "d/rolling.json"],
        with_models(vec!["simulate", "--theta", "0.01,0.005,0,0", "--config", "lifecycle.json", "--out", "r/trace.json"]),
        with_models(vec!["tune", "--config", "lifecycle.json", "--pso", "pso.json", "--policy", "ro", "--out", "r/theta.json"]),
        with_models(vec!["compare", "--config", "lifecycle.json", "--pso", "pso.json", "--mc-paths", "3", "--out", "r/table1.csv"]),
        with_models(vec!["sweep", "--axis", "quantile", "--values", "0.8,0.9", "--config", "lifecycle.json", "--pso", "pso.json", "--mc-paths", "2", "--out", "r/q.csv"]),
        with_models(vec!["report", "--samples", "s/samples.csv", "--compare", "r/table1.csv.json", "--traces", "r/trace.json", "--out", "rep"]),
        with_models(vec!["validate", "--config", "lifecycle.json", "--battery", "battery.json", "--scenario", "day.csv", "--pso", "pso.json", "--out", "v/normalized.json"]),
    ];
    for args in steps {
        ok(dir, &args);
    }
}

/// Hash of every file under `dir` except wall-clock timing sidecars.
pub fn artifact_digests(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.file_name().unwrap().to_string_lossy().ends_with("timings.json") {
                let rel = p.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, gridlife::report::sha256_file(&p).unwrap());
            }
        }
    }
    out
}
