//! Up-front checks over a bundle of input files.

use std::path::Path;

use serde_json::{json, Value};

use crate::dataset::AgingMode;
use crate::dispatch::{read_day_csv, BatterySpec};
use crate::error::{Error, Result};
use crate::gbt::QuantileEnsemble;
use crate::lifecycle::{GbtModels, LifecycleConfig, RateModel};
use crate::tuner::PsoConfig;

#[derive(Clone, Copy, Debug, Default)]
pub struct ConfigFiles<'a> {
    pub lifecycle: Option<&'a Path>,
    pub battery: Option<&'a Path>,
    pub scenario: Option<&'a Path>,
    pub pso: Option<&'a Path>,
    pub model_cyc: Option<&'a Path>,
    pub model_cal: Option<&'a Path>,
    pub tau_hours: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> std::result::Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Checks every given file and the cross-file constraints. Returns the
/// normalized values, or every problem found.
pub fn validate_config(files: &ConfigFiles<'_>) -> std::result::Result<Value, Vec<String>> {
    let mut errors = Vec::new();
    let mut out = serde_json::Map::new();
    let mut lifecycle = None;
    if let Some(p) = files.lifecycle {
        match read_json::<LifecycleConfig>(p) {
            Ok(c) => {
                errors.extend(c.errors().into_iter().map(|e| format!("{}: {e}", p.display())));
                out.insert("lifecycle".into(), json!(c));
                lifecycle = Some(c);
            }
            Err(e) => errors.push(e),
        }
    }
    if let Some(p) = files.battery {
        match read_json::<BatterySpec>(p) {
            Ok(b) => {
                if let Err(e) = b.battery() {
                    errors.push(format!("{}: {e}", p.display()));
                }
                if !(b.grid_cap_kw > 0.0) {
                    errors.push(format!("{}: grid_cap_kw must be positive", p.display()));
                }
                out.insert("battery".into(), json!(b));
            }
            Err(e) => errors.push(e),
        }
    }
    if let Some(p) = files.scenario {
        match read_day_csv(p, files.tau_hours) {
            Ok(d) => {
                out.insert("scenario".into(), json!({ "steps": d.len(), "tau_hours": d.tau }));
            }
            Err(e) => errors.push(format!("{}: {e}", p.display())),
        }
    }
    if let Some(p) = files.pso {
        match read_json::<PsoConfig>(p) {
            Ok(c) => {
                if let Err(e) = c.validate() {
                    errors.push(format!("{}: {e}", p.display()));
                }
                out.insert("pso".into(), json!(c));
            }
            Err(e) => errors.push(e),
        }
    }
    let load = |p: Option<&Path>, mode: AgingMode, errors: &mut Vec<String>| -> Option<QuantileEnsemble<f64>> {
        let p = p?;
        match QuantileEnsemble::<f64>::load(p) {
            Ok(m) if m.mode == mode => Some(m),
            Ok(m) => {
                errors.push(format!("{}: expected a {mode} model, found {}", p.display(), m.mode));
                None
            }
            Err(e) => {
                errors.push(e.to_string());
                None
            }
        }
    };
    let cyc = load(files.model_cyc, AgingMode::Cyclic, &mut errors);
    let cal = load(files.model_cal, AgingMode::Calendar, &mut errors);
    if let (Some(cyc), Some(cal)) = (cyc, cal) {
        out.insert("quantiles".into(), json!({ "cyclic": cyc.quantiles, "calendar": cal.quantiles }));
        if let Ok(models) = GbtModels::new(cyc, cal) {
            if let Some(c) = &lifecycle {
                for mode in [AgingMode::Cyclic, AgingMode::Calendar] {
                    if let Err(e) = models.quantile_index(mode, c.quantile) {
                        errors.push(e.to_string());
                    }
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(Value::Object(out))
    } else {
        Err(errors)
    }
}

/// [`validate_config`] folded into a single configuration error.
pub fn check_config(files: &ConfigFiles<'_>) -> Result<Value> {
    validate_config(files).map_err(|errs| Error::Config(errs.join("\n")))
}
