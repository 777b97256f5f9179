use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gridlife::dataset::{
    process_cells, read_samples_csv, split_dataset, write_samples_csv, write_synthetic_cells, AgingMode, CellFleetConfig,
    SyntheticConfig,
};
use gridlife::dispatch::{
    read_day_csv, rolling_mpc, solve_dispatch, BatterySpec, DispatchProblem, ForecastNoise, ThetaVector,
};
use gridlife::gbt::{GbtParams, QuantileEnsemble, TrainingSet, DEFAULT_QUANTILES};
use gridlife::lifecycle::{simulate_lifecycle, GbtModels, LifecycleSetup, LifecycleTrace, RateModel};
use gridlife::report::{self, CurveSet, RunManifest};
use gridlife::tuner::{
    evaluate_policy, sensitivity_sweep, tune_policy, PolicyEvaluation, PolicyKind, PsoConfig, SweepAxis, TuneOutcome,
};
use gridlife::validate::{validate_config, ConfigFiles};
use gridlife::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{Cli, Command, ModelArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Collects artifacts and timings for one run and writes the sidecars.
struct Run {
    manifest: RunManifest,
    dir: PathBuf,
    anchor: PathBuf,
    timings: BTreeMap<String, serde_json::Value>,
    start: Instant,
}

impl Run {
    fn new(cli: &Cli, name: &str, anchor: PathBuf, dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut manifest = RunManifest::new(name, VERSION);
        manifest.seeds.insert("seed".into(), cli.seed);
        Ok(Self { manifest, dir, anchor, timings: BTreeMap::new(), start: Instant::now() })
    }

    /// A run whose single artifact is `--out`.
    fn for_file(cli: &Cli, name: &str) -> Result<Self> {
        let out = out_path(cli)?;
        let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
        Self::new(cli, name, out, dir)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.add_input(path)
    }

    fn artifact(&mut self, path: &Path) -> Result<()> {
        self.manifest.add_artifact(&self.dir, path)
    }

    fn sidecar(&self, suffix: &str) -> PathBuf {
        if self.anchor == self.dir {
            self.dir.join(suffix)
        } else {
            report::sidecar(&self.anchor, suffix)
        }
    }

    fn finish(mut self) -> Result<()> {
        self.timings.insert("total_seconds".into(), json!(self.start.elapsed().as_secs_f64()));
        let timings_path = self.sidecar("timings.json");
        report::write_json(&timings_path, &json!({ "schema_version": "timings-v1", "timings": self.timings }))?;
        self.manifest.timings_file = Some(timings_path.strip_prefix(&self.dir).unwrap_or(&timings_path).display().to_string());
        report::write_json(&self.sidecar("manifest.json"), &self.manifest)
    }
}

fn out_path(cli: &Cli) -> Result<PathBuf> {
    cli.out.clone().ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn load_models(run: &mut Run, m: &ModelArgs) -> Result<GbtModels> {
    report::require_files(&[&m.model_cyc, &m.model_cal])?;
    run.input(&m.model_cyc)?;
    run.input(&m.model_cal)?;
    GbtModels::new(QuantileEnsemble::<f64>::load(&m.model_cyc)?, QuantileEnsemble::<f64>::load(&m.model_cal)?)
}

fn load_setup(run: &mut Run, config: &Path) -> Result<LifecycleSetup> {
    report::require_files(&[config])?;
    run.input(config)?;
    let setup = LifecycleSetup::load(config)?;
    if let Some(paths) = &setup.config.season_days {
        let base = config.parent().unwrap_or(Path::new("."));
        for p in paths {
            run.input(&base.join(p))?;
        }
    }
    Ok(setup)
}

fn check_quantile(models: &GbtModels, q: f64) -> Result<()> {
    models.quantile_index(AgingMode::Cyclic, q)?;
    models.quantile_index(AgingMode::Calendar, q)?;
    Ok(())
}

fn load_pso(run: &mut Run, path: Option<&Path>) -> Result<PsoConfig> {
    match path {
        None => Ok(PsoConfig::default()),
        Some(p) => {
            report::require_files(&[p])?;
            run.input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let cfg: PsoConfig =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn split_fractions(v: &[f64]) -> Result<[f64; 3]> {
    <[f64; 3]>::try_from(v).map_err(|_| Error::Config(format!("--split needs three fractions, got {}", v.len())))
}

#[derive(Serialize, Deserialize)]
struct ThetaFile {
    schema_version: String,
    policy: PolicyKind,
    seed: u64,
    theta: ThetaVector<f64>,
    cost: f64,
}

#[derive(Serialize, Deserialize)]
struct CompareFile {
    schema_version: String,
    seed: u64,
    gamma_days: f64,
    tuning: Vec<TuneOutcome>,
    evaluations: Vec<PolicyEvaluation>,
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ProcessData { input } => {
            let mut run = Run::for_file(cli, "process-data")?;
            let processed = process_cells(input)?;
            for id in &processed.cells {
                run.input(&input.join(format!("{id}_cycles.csv")))?;
                run.input(&input.join(format!("{id}_cu.csv")))?;
            }
            write_samples_csv(&run.anchor, &processed.samples)?;
            let anchor = run.anchor.clone();
            run.artifact(&anchor)?;
            let info = run.sidecar("processing.json");
            report::write_json(
                &info,
                &json!({
                    "schema_version": "processing-v1",
                    "delta_cu_kwh": processed.delta_cu,
                    "cells": processed.cells,
                    "samples": processed.samples.len(),
                }),
            )?;
            run.artifact(&info)?;
            run.finish()
        }
        Command::Synth { config, raw_cells } => {
            if *raw_cells {
                let dir = out_path(cli)?;
                let mut run = Run::new(cli, "synth", dir.clone(), dir.clone())?;
                let cfg: CellFleetConfig = match config {
                    Some(p) => {
                        run.input(p)?;
                        read_json_file(p)?
                    }
                    None => CellFleetConfig::default(),
                };
                for id in write_synthetic_cells(&dir, &cfg, cli.seed)? {
                    run.artifact(&dir.join(format!("{id}_cycles.csv")))?;
                    run.artifact(&dir.join(format!("{id}_cu.csv")))?;
                }
                return run.finish();
            }
            let mut run = Run::for_file(cli, "synth")?;
            let cfg: SyntheticConfig = match config {
                Some(p) => {
                    run.input(p)?;
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticConfig::default(),
            };
            let samples = gridlife::dataset::generate_synthetic_fleet(&cfg, cli.seed)?;
            write_samples_csv(&run.anchor, &samples)?;
            let anchor = run.anchor.clone();
            run.artifact(&anchor)?;
            run.finish()
        }
        Command::Train { samples, mode, params, quantiles, split } => {
            let mut run = Run::for_file(cli, "train")?;
            let mode: AgingMode = mode.parse()?;
            run.input(samples)?;
            let params = match params {
                Some(p) => {
                    run.input(p)?;
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<GbtParams>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => GbtParams::default(),
            };
            let quantiles = quantiles.clone().unwrap_or_else(|| DEFAULT_QUANTILES.to_vec());
            let data = read_samples_csv(samples)?;
            let parts = split_dataset(&data, split_fractions(split)?, cli.seed)?;
            let train = TrainingSet::<f64>::from_samples(&parts.train, mode);
            let valid = TrainingSet::<f64>::from_samples(&parts.validation, mode);
            let t0 = Instant::now();
            let model = QuantileEnsemble::train(mode, &train, &valid, &quantiles, &params, cli.seed)?;
            run.timings.insert("train_seconds".into(), json!(t0.elapsed().as_secs_f64()));
            std::fs::write(&run.anchor, model.to_json()?).map_err(|e| Error::io(&run.anchor, e))?;
            let anchor = run.anchor.clone();
            run.artifact(&anchor)?;
            run.finish()
        }
        Command::Predict { model, features } => predict(cli, model, features),
        Command::Dispatch { scenario, battery, theta, tau, forecast_sigma } => {
            let mut run = Run::for_file(cli, "dispatch")?;
            report::require_files(&[scenario, battery])?;
            run.input(scenario)?;
            run.input(battery)?;
            let day = read_day_csv(scenario, *tau)?;
            let files = ConfigFiles { battery: Some(battery), scenario: Some(scenario), tau_hours: *tau, ..Default::default() };
            gridlife::validate::check_config(&files)?;
            let spec: BatterySpec = read_json_file(battery)?;
            let state = spec.battery()?;
            let theta = ThetaVector::parse(theta)?;
            let t0 = Instant::now();
            let doc = match forecast_sigma {
                None => {
                    let problem = DispatchProblem::new(
                        day.tau,
                        day.pv.clone(),
                        day.load.clone(),
                        day.tariff.clone(),
                        theta,
                        state,
                        spec.grid_cap_kw,
                    );
                    let sol = solve_dispatch(&problem)?;
                    json!({ "schema_version": "dispatch-v1", "mode": "single_shot", "theta": theta, "solution": sol })
                }
                Some(sigma) => {
                    let noise = ForecastNoise { sigma: *sigma };
                    if !(0.0..1.0 / 3.0).contains(sigma) {
                        return Err(Error::Config(format!("--forecast-sigma must lie in [0, 1/3), got {sigma}")));
                    }
                    let (pe, le) = noise.sample_errors_seeded(day.len(), cli.seed);
                    let outcome = rolling_mpc(&day, &theta, &state, spec.grid_cap_kw, Some(&pe), Some(&le))?;
                    json!({
                        "schema_version": "dispatch-v1",
                        "mode": "rolling",
                        "theta": theta,
                        "forecast_sigma": sigma,
                        "outcome": outcome,
                    })
                }
            };
            run.timings.insert("dispatch_seconds".into(), json!(t0.elapsed().as_secs_f64()));
            report::write_json(&run.anchor, &doc)?;
            let anchor = run.anchor.clone();
            run.artifact(&anchor)?;
            run.finish()
        }
        Command::Simulate { theta, config, models } => {
            let mut run = Run::for_file(cli, "simulate")?;
            let setup = load_setup(&mut run, config)?;
            let models = load_models(&mut run, models)?;
            check_quantile(&models, setup.config.quantile)?;
            let theta = ThetaVector::parse(theta)?;
            let t0 = Instant::now();
            let trace = simulate_lifecycle(&theta, &setup, &models, cli.seed)?;
            run.timings.insert("simulate_seconds".into(), json!(t0.elapsed().as_secs_f64()));
            report::write_json(&run.anchor, &trace)?;
            let anchor = run.anchor.clone();
            run.artifact(&anchor)?;
            run.finish()
        }
        Command::Tune { config, pso, models, policy } => {
            let mut run = Run::for_file(cli, "tune")?;
            let setup = load_setup(&mut run, config)?;
            let pso = load_pso(&mut run, pso.as_deref())?;
            let models = load_models(&mut run, models)?;
            check_quantile(&models, setup.config.quantile)?;
            let kind: PolicyKind = policy.parse()?;
            let outcome = tune_policy(kind, &setup, &models, &pso, cli.seed)?;
            if let Some(rt) = &outcome.runtime {
                run.timings.insert("runtime".into(), json!(rt));
            }
            let file = ThetaFile {
                schema_version: "theta-v1".into(),
                policy: kind,
                seed: cli.seed,
                theta: outcome.theta,
                cost: outcome.cost,
            };
            report::write_json(&run.anchor, &file)?;
            let anchor = run.anchor.clone();
            run.artifact(&anchor)?;
            if let Some(p) = &outcome.pso {
                let log_path = run.sidecar("convergence.csv");
                report::write_convergence_log(&log_path, &p.log)?;
                run.artifact(&log_path)?;
            }
            run.finish()
        }
        Command::Compare { policies, config, pso, models, mc_paths } => {
            let mut run = Run::for_file(cli, "compare")?;
            let setup = load_setup(&mut run, config)?;
            let pso = load_pso(&mut run, pso.as_deref())?;
            let models = load_models(&mut run, models)?;
            check_quantile(&models, setup.config.quantile)?;
            check_quantile(&models, 0.9)?;
            check_quantile(&models, 0.95)?;
            let kinds: Vec<PolicyKind> = policies.iter().map(|p| p.parse()).collect::<Result<_>>()?;
            let paths = mc_paths.unwrap_or(setup.config.mc_paths);
            let mut tuning = Vec::new();
            let mut evaluations = Vec::new();
            for kind in kinds {
                let t0 = Instant::now();
                let outcome = tune_policy(kind, &setup, &models, &pso, cli.seed)?;
                let eval = evaluate_policy(kind, Some(&outcome.theta), &setup, &models, paths, cli.seed)?;
                let mut t = json!({ "seconds": t0.elapsed().as_secs_f64() });
                if let Some(rt) = &outcome.runtime {
                    t["runtime"] = json!(rt);
                }
                run.timings.insert(kind.to_string(), t);
                tuning.push(TuneOutcome { runtime: None, ..outcome });
                evaluations.push(eval);
            }
            report::write_comparison_table(&run.anchor, &evaluations)?;
            let anchor = run.anchor.clone();
            run.artifact(&anchor)?;
            let detail = run.sidecar("json");
            let doc = CompareFile {
                schema_version: "compare-v1".into(),
                seed: cli.seed,
                gamma_days: setup.config.gamma_days,
                tuning,
                evaluations,
            };
            report::write_json(&detail, &doc)?;
            run.artifact(&detail)?;
            run.finish()
        }
        Command::Sweep { axis, values, config, pso, models, mc_paths } => {
            let mut run = Run::for_file(cli, "sweep")?;
            let setup = load_setup(&mut run, config)?;
            let pso = load_pso(&mut run, pso.as_deref())?;
            let models = load_models(&mut run, models)?;
            let axis: SweepAxis = axis.parse()?;
            let paths = mc_paths.unwrap_or(setup.config.mc_paths);
            let rows = sensitivity_sweep(axis, values, &setup, &models, &pso, paths, cli.seed)?;
            report::write_sweep_table(&run.anchor, &axis.to_string(), &rows)?;
            let anchor = run.anchor.clone();
            run.artifact(&anchor)?;
            run.finish()
        }
        Command::Report { samples, model_cyc, model_cal, split, compare, traces, bins } => {
            report_cmd(cli, samples.as_deref(), model_cyc.as_deref(), model_cal.as_deref(), split, compare.as_deref(), traces, *bins)
        }
        Command::Validate { config, battery, scenario, pso, model_cyc, model_cal, tau } => {
            let files = ConfigFiles {
                lifecycle: config.as_deref(),
                battery: battery.as_deref(),
                scenario: scenario.as_deref(),
                pso: pso.as_deref(),
                model_cyc: model_cyc.as_deref(),
                model_cal: model_cal.as_deref(),
                tau_hours: *tau,
            };
            let mut missing: Vec<&Path> = Vec::new();
            for p in [&files.lifecycle, &files.battery, &files.scenario, &files.pso, &files.model_cyc, &files.model_cal]
                .into_iter()
                .flatten()
            {
                missing.push(p);
            }
            report::require_files(&missing)?;
            match validate_config(&files) {
                Ok(normalized) => {
                    let text = serde_json::to_string_pretty(&normalized)? + "\n";
                    match &cli.out {
                        Some(p) => {
                            let mut run = Run::for_file(cli, "validate")?;
                            for f in &missing {
                                run.input(f)?;
                            }
                            std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
                            run.artifact(p)?;
                            run.finish()
                        }
                        None => {
                            print!("{text}");
                            Ok(())
                        }
                    }
                }
                Err(errors) => {
                    for e in &errors {
                        eprintln!("{e}");
                    }
                    Err(Error::Config(format!("{} problem(s) found", errors.len())))
                }
            }
        }
    }
}

fn predict(cli: &Cli, model_path: &Path, features: &Path) -> Result<()> {
    report::require_files(&[model_path, features])?;
    let model = QuantileEnsemble::<f64>::load(model_path)?;
    let mut reader = csv::Reader::from_path(features).map_err(|e| Error::Data(format!("{}: {e}", features.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let cols: Vec<usize> = model
        .feature_names
        .iter()
        .map(|name| {
            header.iter().position(|h| h == name).ok_or_else(|| {
                Error::Data(format!("{}: missing column '{name}' (have {header:?})", features.display()))
            })
        })
        .collect::<Result<_>>()?;
    let mut out_header = model.feature_names.clone();
    out_header.extend(model.quantiles.iter().map(|q| format!("q{q}")));
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let x: Vec<f64> = cols
            .iter()
            .map(|&c| {
                rec.get(c).unwrap_or("").trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!("{}: row {}: column {} is not a number", features.display(), line + 2, header[c]))
                })
            })
            .collect::<Result<_>>()?;
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.extend(model.predict_quantiles(&x)?.iter().map(|v| v.to_string()));
        rows.push(row);
    }
    let write = |w: &mut csv::Writer<Box<dyn std::io::Write>>| -> Result<()> {
        w.write_record(&out_header)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    };
    match &cli.out {
        None => write(&mut csv::Writer::from_writer(Box::new(std::io::stdout()))),
        Some(p) => {
            let mut run = Run::for_file(cli, "predict")?;
            run.input(model_path)?;
            run.input(features)?;
            let file = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
            write(&mut csv::Writer::from_writer(Box::new(file)))?;
            run.artifact(p)?;
            run.finish()
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn report_cmd(
    cli: &Cli,
    samples: Option<&Path>,
    model_cyc: Option<&Path>,
    model_cal: Option<&Path>,
    split: &[f64],
    compare: Option<&Path>,
    traces: &[PathBuf],
    bins: usize,
) -> Result<()> {
    let mut wanted: Vec<&Path> = Vec::new();
    wanted.extend(samples);
    wanted.extend(model_cyc);
    wanted.extend(model_cal);
    wanted.extend(compare);
    wanted.extend(traces.iter().map(PathBuf::as_path));
    if wanted.is_empty() {
        return Err(Error::Config("report needs --samples with both models, --compare or --traces".into()));
    }
    report::require_files(&wanted)?;
    let dir = out_path(cli)?;
    let mut run = Run::new(cli, "report", dir.clone(), dir.clone())?;
    for p in &wanted {
        run.input(p)?;
    }
    match (samples, model_cyc, model_cal) {
        (Some(s), Some(mc), Some(ml)) => {
            let models = GbtModels::new(QuantileEnsemble::<f64>::load(mc)?, QuantileEnsemble::<f64>::load(ml)?)?;
            let data = read_samples_csv(s)?;
            let test = split_dataset(&data, split_fractions(split)?, cli.seed)?.test;
            for (mode, model) in [(AgingMode::Cyclic, &models.cyclic), (AgingMode::Calendar, &models.calendar)] {
                let subset: Vec<_> = test.iter().filter(|x| x.mode == mode).cloned().collect();
                let rows = report::prediction_intervals(&models, &subset)?;
                let path = dir.join(format!("prediction_intervals_{mode}.csv"));
                report::write_prediction_intervals(&path, &model.quantiles, &rows)?;
                run.artifact(&path)?;
                let k = model.quantile_index(0.5).ok();
                let errors: Vec<f64> = match k {
                    Some(k) => rows.iter().map(|r| r.actual - r.quantiles[k]).collect(),
                    None => vec![],
                };
                let path = dir.join(format!("median_error_histogram_{mode}.csv"));
                report::write_histogram(&path, &report::histogram(&errors, bins))?;
                run.artifact(&path)?;
            }
        }
        (None, None, None) => {}
        _ => return Err(Error::Config("prediction intervals need --samples, --model-cyc and --model-cal together".into())),
    }
    let mut sets_owned: Vec<(String, LifecycleTrace, Option<gridlife::lifecycle::MonteCarloSummary>)> = Vec::new();
    let mut gamma = None;
    if let Some(c) = compare {
        let doc: CompareFile = read_json_file(c)?;
        gamma = Some(doc.gamma_days);
        let path = dir.join("comparison.csv");
        report::write_comparison_table(&path, &doc.evaluations)?;
        run.artifact(&path)?;
        for e in doc.evaluations {
            sets_owned.push((e.policy.to_string(), e.worst_case, Some(e.monte_carlo)));
        }
    }
    for t in traces {
        let trace: LifecycleTrace = read_json_file(t)?;
        let label = t.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        sets_owned.push((label, trace, None));
    }
    if !sets_owned.is_empty() {
        let gamma = gamma.unwrap_or_else(|| {
            let t = &sets_owned[0].1;
            if t.battery_life_periods > 0 {
                t.battery_life_days / t.battery_life_periods as f64
            } else {
                1.0
            }
        });
        let sets: Vec<CurveSet<'_>> = sets_owned
            .iter()
            .map(|(l, w, mc)| CurveSet { label: l.clone(), worst_case: w, monte_carlo: mc.as_ref() })
            .collect();
        let path = dir.join("capacity_curves.csv");
        report::write_capacity_curves(&path, &sets, gamma)?;
        run.artifact(&path)?;
    }
    run.finish()
}
