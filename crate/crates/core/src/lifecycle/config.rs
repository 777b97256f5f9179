use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dispatch::{read_day_csv, BatteryState, DayProfile, DayScenario};
use crate::error::{Error, Result};

/// Battery hardware shared by every period; the capacity comes from the
/// life-cycle state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    pub p_chg_cap_kw: f64,
    pub p_dis_cap_kw: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub grid_cap_kw: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self { p_chg_cap_kw: 500.0, p_dis_cap_kw: 500.0, eta_c: 0.95, eta_d: 0.95, grid_cap_kw: 1500.0 }
    }
}

/// The `lifecycle.json` format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifecycleConfig {
    pub c0_kwh: f64,
    pub c_min_frac: f64,
    pub n0_periods: usize,
    pub interest_per_period: f64,
    pub invest_usd: f64,
    pub gamma_days: f64,
    pub quantile: f64,
    pub ambient_c_per_season: [f64; 4],
    /// Multiplier from one dispatched day to a period; defaults to `gamma_days`.
    pub day_scale: Option<f64>,
    pub battery: BatteryParams,
    pub day_profile: DayProfile,
    /// Optional `day.csv` files, one per season, overriding `day_profile`.
    /// Relative paths resolve against the config file's directory.
    pub season_days: Option<[PathBuf; 4]>,
    pub tau_hours: f64,
    /// Relative forecast error of the rolling dispatch.
    pub forecast_sigma: f64,
    pub mc_paths: usize,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            c0_kwh: 910.8,
            c_min_frac: 0.4,
            n0_periods: 40,
            interest_per_period: 1.032f64.powf(0.25) - 1.0,
            invest_usd: 2e5,
            gamma_days: 91.0,
            quantile: 0.9,
            ambient_c_per_season: [35.0; 4],
            day_scale: None,
            battery: BatteryParams::default(),
            day_profile: DayProfile::default(),
            season_days: None,
            tau_hours: 1.0,
            forecast_sigma: 0.0,
            mc_paths: 100,
        }
    }
}

impl LifecycleConfig {
    pub fn c_min(&self) -> f64 {
        self.c_min_frac * self.c0_kwh
    }

    pub fn day_scale(&self) -> f64 {
        self.day_scale.unwrap_or(self.gamma_days)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collects every violated constraint.
    pub fn errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        check(self.c0_kwh > 0.0 && self.c0_kwh.is_finite(), format!("c0_kwh must be positive, got {}", self.c0_kwh));
        check(
            self.c_min_frac > 0.0 && self.c_min_frac <= 1.0,
            format!("c_min_frac must lie in (0, 1], got {}", self.c_min_frac),
        );
        check(self.n0_periods >= 1, "n0_periods must be at least 1".into());
        check(
            self.interest_per_period > 0.0 && self.interest_per_period.is_finite(),
            format!("interest_per_period must be positive, got {}", self.interest_per_period),
        );
        check(self.invest_usd >= 0.0, format!("invest_usd must be nonnegative, got {}", self.invest_usd));
        check(self.gamma_days > 0.0, format!("gamma_days must be positive, got {}", self.gamma_days));
        check(self.quantile > 0.0 && self.quantile < 1.0, format!("quantile must lie in (0, 1), got {}", self.quantile));
        check(
            self.ambient_c_per_season.iter().all(|t| t.is_finite()),
            "ambient_c_per_season must be finite".into(),
        );
        check(self.day_scale() > 0.0, format!("day_scale must be positive, got {}", self.day_scale()));
        check(self.tau_hours > 0.0, format!("tau_hours must be positive, got {}", self.tau_hours));
        check(
            (0.0..1.0 / 3.0).contains(&self.forecast_sigma),
            format!("forecast_sigma must lie in [0, 1/3), got {}", self.forecast_sigma),
        );
        check(self.battery.grid_cap_kw > 0.0, format!("grid_cap_kw must be positive, got {}", self.battery.grid_cap_kw));
        if let Err(e) = BatteryState::new(
            self.c0_kwh.max(1e-9),
            self.c0_kwh.max(1e-9),
            self.battery.p_chg_cap_kw,
            self.battery.p_dis_cap_kw,
            self.battery.eta_c,
            self.battery.eta_d,
        ) {
            errs.push(e.to_string());
        }
        if let Err(e) = self.day_profile.validate() {
            errs.push(e.to_string());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

/// A validated configuration with its four seasonal typical days.
#[derive(Clone, Debug)]
pub struct LifecycleSetup {
    pub config: LifecycleConfig,
    pub days: [DayScenario<f64>; 4],
}

impl LifecycleSetup {
    /// Uses the built-in profile; `season_days` must be unset.
    pub fn new(config: LifecycleConfig) -> Result<Self> {
        if config.season_days.is_some() {
            return Err(Error::Config("season_days needs a base directory; use LifecycleSetup::load".into()));
        }
        config.validate()?;
        let days = config.day_profile.seasons();
        Ok(Self { config, days })
    }

    /// Resolves `season_days` against `base_dir`.
    pub fn with_base_dir(config: LifecycleConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let days = match &config.season_days {
            None => config.day_profile.seasons(),
            Some(paths) => {
                let mut out = Vec::with_capacity(4);
                for p in paths {
                    let full = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                    out.push(read_day_csv(&full, config.tau_hours)?);
                }
                out.try_into().expect("four seasons")
            }
        };
        Ok(Self { config, days })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config = LifecycleConfig::load(path)?;
        Self::with_base_dir(config, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn battery(&self) -> Result<BatteryState<f64>> {
        let c = &self.config;
        BatteryState::new(
            c.c0_kwh,
            c.c0_kwh,
            c.battery.p_chg_cap_kw,
            c.battery.p_dis_cap_kw,
            c.battery.eta_c,
            c.battery.eta_d,
        )
    }

    /// Highest buy price over all seasons.
    pub fn max_buy_price(&self) -> f64 {
        self.days.iter().map(|d| d.tariff.max_buy()).fold(0.0, f64::max)
    }

    /// `max buy price * tau * T` over all seasons.
    pub fn max_power_price(&self) -> f64 {
        self.days.iter().map(|d| d.tariff.max_buy() * d.tau * d.len() as f64).fold(0.0, f64::max)
    }
}
