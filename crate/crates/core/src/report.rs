//! Run manifests and figure-ready CSV tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DegradationSample;
use crate::error::{Error, Result};
use crate::lifecycle::{LifecycleTrace, MonteCarloSummary, RateModel};
use crate::tuner::{IterationLog, PolicyEvaluation, SweepRow};

pub const MANIFEST_SCHEMA: &str = "manifest-v1";

/// Record of one CLI run. Wall-clock timings live in a separate file so the
/// manifest itself is reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub command: String,
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file, keyed by the path as given.
    pub config_hashes: BTreeMap<String, String>,
    /// Output file names relative to the output directory, with hashes.
    pub artifacts: BTreeMap<String, String>,
    pub timings_file: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, tool_version: &str) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA.into(),
            command: command.into(),
            tool_version: tool_version.into(),
            ..Default::default()
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.config_hashes.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Registers an output file; `dir` is the output directory.
    pub fn add_artifact(&mut self, dir: &Path, path: &Path) -> Result<()> {
        let name = path.strip_prefix(dir).unwrap_or(path).display().to_string();
        self.artifacts.insert(name, sha256_file(path)?);
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Fails with one message naming every missing path.
pub fn require_files(paths: &[&Path]) -> Result<()> {
    let missing: Vec<String> = paths.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("missing input artifacts: {}", missing.join(", "))))
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub const TABLE1_COLUMNS: [&str; 8] =
    ["policy", "theta_efc", "theta_dod", "theta_c", "theta_d", "cost_q90", "cost_q95", "mean_life_days"];

/// Method-comparison table. Policies without θ leave the θ cells empty.
pub fn write_comparison_table(path: &Path, rows: &[PolicyEvaluation]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TABLE1_COLUMNS)?;
    for r in rows {
        let theta = match (r.policy, &r.theta) {
            (crate::tuner::PolicyKind::NoUsage, _) | (_, None) => vec![String::new(); 4],
            (_, Some(t)) => t.to_array().iter().map(|&v| fmt(v)).collect(),
        };
        let mut rec = vec![r.policy.to_string()];
        rec.extend(theta);
        rec.extend([fmt(r.cost_q90), fmt(r.cost_q95), fmt(r.mean_life_days())]);
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_sweep_table(path: &Path, axis: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([axis, "theta_efc", "theta_dod", "theta_c", "theta_d", "objective", "tuned_objective", "mean_life_days"])?;
    for r in rows {
        let mut rec = vec![fmt(r.value)];
        rec.extend(r.theta.to_array().iter().map(|&v| fmt(v)));
        rec.extend([fmt(r.objective), fmt(r.tuned_objective), fmt(r.mean_life_days)]);
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_convergence_log(path: &Path, log: &[IterationLog]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "best_cost", "theta_efc", "theta_dod", "theta_c", "theta_d", "evaluations", "invalid"])?;
    for l in log {
        let mut rec = vec![l.iteration.to_string(), fmt(l.best_cost)];
        rec.extend(l.best_position.iter().map(|&v| fmt(v)));
        rec.extend([l.evaluations.to_string(), l.invalid.to_string()]);
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One labelled capacity path.
pub struct CurveSet<'a> {
    pub label: String,
    pub worst_case: &'a LifecycleTrace,
    pub monte_carlo: Option<&'a MonteCarloSummary>,
}

/// Capacity against elapsed days: the worst-case path (`path` empty) and any
/// Monte Carlo paths.
pub fn write_capacity_curves(path: &Path, sets: &[CurveSet<'_>], gamma_days: f64) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["label", "kind", "path", "period", "day", "capacity_kwh"])?;
    let mut emit = |label: &str, kind: &str, idx: String, trace: &LifecycleTrace| -> Result<()> {
        for (n, c) in trace.capacities().into_iter().enumerate() {
            w.write_record([label, kind, &idx, &n.to_string(), &fmt(n as f64 * gamma_days), &fmt(c)])?;
        }
        Ok(())
    };
    for s in sets {
        emit(&s.label, "worst_case", String::new(), s.worst_case)?;
        if let Some(mc) = s.monte_carlo {
            for (k, p) in mc.paths.iter().enumerate() {
                emit(&s.label, "monte_carlo", k.to_string(), p)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-sample predicted quantiles, sorted by the measured rate.
pub struct IntervalRow {
    pub actual: f64,
    pub mode: crate::dataset::AgingMode,
    pub quantiles: Vec<f64>,
}

pub fn prediction_intervals<M: RateModel + ?Sized>(models: &M, samples: &[DegradationSample]) -> Result<Vec<IntervalRow>> {
    let mut rows = samples
        .iter()
        .map(|s| Ok(IntervalRow { actual: s.rate, mode: s.mode, quantiles: models.predict(s.mode, &s.features())? }))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.actual.total_cmp(&b.actual));
    Ok(rows)
}

pub fn write_prediction_intervals(path: &Path, levels: &[f64], rows: &[IntervalRow]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["rank".to_string(), "mode".into(), "actual".into()];
    header.extend(levels.iter().map(|q| format!("q{q}")));
    w.write_record(&header)?;
    for (k, r) in rows.iter().enumerate() {
        let mut rec = vec![k.to_string(), r.mode.to_string(), fmt(r.actual)];
        rec.extend(r.quantiles.iter().map(|&v| fmt(v)));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Equal-width histogram of `values` over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return vec![];
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts.into_iter().enumerate().map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c)).collect()
}

pub fn write_histogram(path: &Path, bins: &[(f64, f64, usize)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for &(lo, hi, c) in bins {
        w.write_record([fmt(lo), fmt(hi), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `<file>.<suffix>` next to `file`.
pub fn sidecar(file: &Path, suffix: &str) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{suffix}"));
    file.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.1, 0.5, 1.0], 2);
        assert_eq!(h, vec![(0.0, 0.5, 2), (0.5, 1.0, 2)]);
        assert_eq!(histogram(&[3.0, 3.0], 4).iter().map(|b| b.2).sum::<usize>(), 2);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("out/trace.json"), "manifest.json"), Path::new("out/trace.json.manifest.json"));
    }

    #[test]
    fn missing_files_are_listed() {
        let err = require_files(&[Path::new("/nonexistent/a"), Path::new("/nonexistent/b")]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("/nonexistent/a") && msg.contains("/nonexistent/b"));
    }
}
