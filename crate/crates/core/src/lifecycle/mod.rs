//! Life-cycle simulation: period-by-period dispatch, capacity fade and the
//! replacement-chain cost.

mod config;

pub use config::{BatteryParams, LifecycleConfig, LifecycleSetup};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::AgingMode;
use crate::dispatch::{aggregates_to_features, idle_day, rolling_mpc, DayOutcome, ForecastNoise, ThetaVector};
use crate::error::{Error, Result};
use crate::gbt::{inverse_cdf, QuantileEnsemble};

pub const TRACE_SCHEMA: &str = "trace-v1";

/// Source of sorted quantile vectors of degradation rates.
pub trait RateModel: Sync {
    fn quantiles(&self, mode: AgingMode) -> &[f64];

    /// Ascending rate quantiles at `x` (feature schema of `mode`).
    fn predict(&self, mode: AgingMode, x: &[f64]) -> Result<Vec<f64>>;

    /// Lower clamps applied to prediction inputs.
    fn floors(&self, _mode: AgingMode) -> Option<Vec<f64>> {
        None
    }

    /// Per-feature training minima and maxima, when known.
    fn feature_bounds(&self, _mode: AgingMode) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }

    fn quantile_index(&self, mode: AgingMode, q: f64) -> Result<usize> {
        self.quantiles(mode).iter().position(|&v| (v - q).abs() < 1e-9).ok_or_else(|| {
            Error::Config(format!("quantile {q} not trained in the {mode} model; available: {:?}", self.quantiles(mode)))
        })
    }
}

/// Trained cyclic and calendar ensembles.
pub struct GbtModels {
    pub cyclic: QuantileEnsemble<f64>,
    pub calendar: QuantileEnsemble<f64>,
}

impl GbtModels {
    pub fn new(cyclic: QuantileEnsemble<f64>, calendar: QuantileEnsemble<f64>) -> Result<Self> {
        if cyclic.mode != AgingMode::Cyclic || calendar.mode != AgingMode::Calendar {
            return Err(Error::Config("expected one cyclic and one calendar model".into()));
        }
        Ok(Self { cyclic, calendar })
    }

    fn model(&self, mode: AgingMode) -> &QuantileEnsemble<f64> {
        match mode {
            AgingMode::Cyclic => &self.cyclic,
            AgingMode::Calendar => &self.calendar,
        }
    }
}

impl RateModel for GbtModels {
    fn quantiles(&self, mode: AgingMode) -> &[f64] {
        &self.model(mode).quantiles
    }

    fn predict(&self, mode: AgingMode, x: &[f64]) -> Result<Vec<f64>> {
        self.model(mode).predict_quantiles(x)
    }

    fn floors(&self, mode: AgingMode) -> Option<Vec<f64>> {
        Some(self.model(mode).feature_floors())
    }

    fn feature_bounds(&self, mode: AgingMode) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = self.model(mode);
        Some((m.feature_min.clone(), m.feature_max.clone()))
    }
}

/// Rates that ignore the features.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantRates {
    pub quantiles: Vec<f64>,
    pub cyclic: Vec<f64>,
    pub calendar: Vec<f64>,
}

impl ConstantRates {
    /// The same cyclic and calendar rate at every quantile level.
    pub fn flat(quantiles: &[f64], r_cyc: f64, r_cal: f64) -> Self {
        Self { quantiles: quantiles.to_vec(), cyclic: vec![r_cyc; quantiles.len()], calendar: vec![r_cal; quantiles.len()] }
    }
}

impl RateModel for ConstantRates {
    fn quantiles(&self, _mode: AgingMode) -> &[f64] {
        &self.quantiles
    }

    fn predict(&self, mode: AgingMode, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(match mode {
            AgingMode::Cyclic => self.cyclic.clone(),
            AgingMode::Calendar => self.calendar.clone(),
        })
    }
}

/// Equivalent full cycles of a dispatched period.
pub fn period_efc(throughput_kwh: f64, day_scale: f64, c0: f64) -> f64 {
    throughput_kwh * day_scale / (2.0 * c0)
}

/// Next-period capacity `c - r_cyc * efc - r_cal * gamma`; negative rates
/// are clamped to zero.
pub fn capacity_update(c: f64, r_cyc: f64, efc: f64, r_cal: f64, gamma: f64) -> f64 {
    c - r_cyc.max(0.0) * efc - r_cal.max(0.0) * gamma
}

/// The `q`-quantile (worst-case) next capacity for one dispatched period.
pub fn worst_case_capacity<M: RateModel + ?Sized>(
    models: &M,
    x_cyc: &[f64],
    x_cal: &[f64],
    c: f64,
    efc: f64,
    q: f64,
    gamma: f64,
) -> Result<f64> {
    let kc = models.quantile_index(AgingMode::Cyclic, q)?;
    let kk = models.quantile_index(AgingMode::Calendar, q)?;
    let r_cyc = clamp_rate(models.predict(AgingMode::Cyclic, x_cyc)?[kc], "cyclic");
    let r_cal = clamp_rate(models.predict(AgingMode::Calendar, x_cal)?[kk], "calendar");
    Ok(capacity_update(c, r_cyc, efc, r_cal, gamma))
}

fn clamp_rate(r: f64, what: &str) -> f64 {
    if r < 0.0 {
        log::warn!("negative {what} rate prediction {r} clamped to 0");
        0.0
    } else {
        r
    }
}

/// `(1 - (1+i)^-n0) / (1 - (1+i)^-n)`.
pub fn chain_coefficient(n: usize, n0: usize, i: f64) -> Result<f64> {
    if n == 0 || n > n0 {
        return Err(Error::Domain(format!("battery life {n} must lie in 1..={n0}")));
    }
    if !(i > 0.0) {
        return Err(Error::Domain(format!("interest rate {i} must be positive")));
    }
    let v = 1.0 + i;
    Ok((1.0 - v.powi(-(n0 as i32))) / (1.0 - v.powi(-(n as i32))))
}

/// Replacement-chain cost of a battery living `costs.len()` periods.
pub fn replacement_chain_cost(costs: &[f64], n0: usize, i: f64, invest: f64) -> Result<f64> {
    let coef = chain_coefficient(costs.len(), n0, i)?;
    let v = 1.0 + i;
    let discounted: f64 = costs.iter().enumerate().map(|(k, g)| g / v.powi(k as i32 + 1)).sum();
    Ok(coef * (invest + discounted))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EndOfLife,
    ProjectHorizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: usize,
    pub season: usize,
    pub capacity_in: f64,
    pub throughput_kwh: f64,
    pub band_kwh: f64,
    pub peak_chg_kw: f64,
    pub peak_dis_kw: f64,
    pub efc: f64,
    pub r_cyc: f64,
    pub r_cal: f64,
    pub capacity_out: f64,
    pub op_cost: f64,
    pub discounted_cost: f64,
    pub grid_cap_violations: usize,
    /// Quantile-based next capacity on the same dispatch, for sampled paths.
    pub worst_case_capacity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifecycleTrace {
    pub schema_version: String,
    pub theta: Option<ThetaVector<f64>>,
    pub records: Vec<PeriodRecord>,
    pub battery_life_periods: usize,
    pub battery_life_days: f64,
    pub chain_coefficient: f64,
    pub total_cost: f64,
    pub termination: Termination,
}

impl LifecycleTrace {
    pub fn capacities(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.records.first().map(|r| vec![r.capacity_in]).unwrap_or_default();
        c.extend(self.records.iter().map(|r| r.capacity_out));
        c
    }
}

/// How the battery is operated each period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dispatcher {
    Mpc(ThetaVector<f64>),
    /// Grid-only operation; the battery rests.
    Idle,
}

/// How the realized degradation rate is chosen each period.
#[derive(Clone, Copy, Debug)]
pub enum RateDraw<'a> {
    /// The `q`-quantile lower bound on the next capacity.
    Quantile(f64),
    /// One uniform per period, shared by both models and mapped through the
    /// piecewise-linear inverse CDF of the predicted quantiles.
    Uniform(&'a [f64]),
}

fn period_rng(seed: u64, period: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(period as u64);
    rng
}

/// Runs the period loop while `n < N0` and the capacity stays at or above
/// the end-of-life threshold.
pub fn simulate<M: RateModel + ?Sized>(
    setup: &LifecycleSetup,
    models: &M,
    dispatcher: Dispatcher,
    draw: RateDraw<'_>,
    seed: u64,
) -> Result<LifecycleTrace> {
    let cfg = &setup.config;
    let c_min = cfg.c_min();
    let gamma = cfg.gamma_days;
    let day_scale = cfg.day_scale();
    let v = 1.0 + cfg.interest_per_period;
    let worst_q = cfg.quantile;
    let (qi_cyc, qi_cal) = match draw {
        RateDraw::Quantile(q) => (
            Some(models.quantile_index(AgingMode::Cyclic, q)?),
            Some(models.quantile_index(AgingMode::Calendar, q)?),
        ),
        RateDraw::Uniform(u) => {
            if u.len() < cfg.n0_periods {
                return Err(Error::Config(format!("need {} uniforms, got {}", cfg.n0_periods, u.len())));
            }
            (None, None)
        }
    };
    let floors_cyc = models.floors(AgingMode::Cyclic);
    let floors_cal = models.floors(AgingMode::Calendar);
    let noise = ForecastNoise { sigma: cfg.forecast_sigma };
    let base_battery = setup.battery()?;
    let mut c = cfg.c0_kwh;
    let mut records = Vec::new();
    while records.len() < cfg.n0_periods && c >= c_min {
        let n = records.len() + 1;
        let season = (n - 1) % 4;
        let day = &setup.days[season];
        let ambient = cfg.ambient_c_per_season[season];
        let battery = base_battery.with_capacity(c);
        let mut rng = period_rng(seed, n);
        let (pe, le) = noise.sample_errors(day.len(), &mut rng);
        let outcome: DayOutcome<f64> = match dispatcher {
            Dispatcher::Mpc(theta) => {
                rolling_mpc(day, &theta, &battery, cfg.battery.grid_cap_kw, Some(&pe), Some(&le))
            }
            Dispatcher::Idle => Ok(idle_day(day, &battery, cfg.battery.grid_cap_kw)),
        }
        .map_err(|e| Error::Period { period: n, source: Box::new(e) })?;
        let efc = period_efc(outcome.throughput, day_scale, cfg.c0_kwh);
        let x_cyc =
            aggregates_to_features(outcome.band(), outcome.peak_c, outcome.peak_d, &battery, ambient, floors_cyc.as_deref());
        let mut x_cal = vec![c, ambient];
        if let Some(f) = &floors_cal {
            for (v, fl) in x_cal.iter_mut().zip(f) {
                *v = v.max(*fl);
            }
        }
        let pred_cyc = models.predict(AgingMode::Cyclic, &x_cyc)?;
        let pred_cal = models.predict(AgingMode::Calendar, &x_cal)?;
        let (r_cyc, r_cal, worst) = match draw {
            RateDraw::Quantile(_) => (pred_cyc[qi_cyc.unwrap()], pred_cal[qi_cal.unwrap()], None),
            RateDraw::Uniform(u) => {
                let r_cyc = inverse_cdf(models.quantiles(AgingMode::Cyclic), &pred_cyc, u[n - 1]);
                let r_cal = inverse_cdf(models.quantiles(AgingMode::Calendar), &pred_cal, u[n - 1]);
                let worst = worst_case_capacity(models, &x_cyc, &x_cal, c, efc, worst_q, gamma).ok();
                (r_cyc, r_cal, worst)
            }
        };
        let (r_cyc, r_cal) = (clamp_rate(r_cyc, "cyclic"), clamp_rate(r_cal, "calendar"));
        let c_next = capacity_update(c, r_cyc, efc, r_cal, gamma);
        let g = outcome.operational_cost * day_scale;
        log::info!("period {n}: C={c_next:.3} kWh, EFC={efc:.3}, g={g:.2}");
        records.push(PeriodRecord {
            period: n,
            season,
            capacity_in: c,
            throughput_kwh: outcome.throughput,
            band_kwh: outcome.band(),
            peak_chg_kw: outcome.peak_c,
            peak_dis_kw: outcome.peak_d,
            efc,
            r_cyc,
            r_cal,
            capacity_out: c_next,
            op_cost: g,
            discounted_cost: g / v.powi(n as i32),
            grid_cap_violations: outcome.grid_cap_violations,
            worst_case_capacity: worst,
        });
        c = c_next;
    }
    let life = records.len();
    let costs: Vec<f64> = records.iter().map(|r| r.op_cost).collect();
    let total_cost = replacement_chain_cost(&costs, cfg.n0_periods, cfg.interest_per_period, cfg.invest_usd)?;
    Ok(LifecycleTrace {
        schema_version: TRACE_SCHEMA.into(),
        theta: match dispatcher {
            Dispatcher::Mpc(t) => Some(t),
            Dispatcher::Idle => None,
        },
        battery_life_periods: life,
        battery_life_days: life as f64 * gamma,
        chain_coefficient: chain_coefficient(life, cfg.n0_periods, cfg.interest_per_period)?,
        total_cost,
        termination: if c < c_min { Termination::EndOfLife } else { Termination::ProjectHorizon },
        records,
    })
}

/// Worst-case life-cycle simulation at the configured quantile.
pub fn simulate_lifecycle<M: RateModel + ?Sized>(
    theta: &ThetaVector<f64>,
    setup: &LifecycleSetup,
    models: &M,
    seed: u64,
) -> Result<LifecycleTrace> {
    simulate(setup, models, Dispatcher::Mpc(*theta), RateDraw::Quantile(setup.config.quantile), seed)
}

/// Per-period uniforms of Monte Carlo path `path` (seed `seed + path`).
pub fn path_uniforms(seed: u64, path: usize, periods: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(path as u64));
    (0..periods).map(|_| rng.random::<f64>()).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub paths: Vec<LifecycleTrace>,
    pub mean_life_days: f64,
    pub mean_cost: f64,
    /// Empirical 90% and 95% quantiles of the path costs.
    pub cost_q90: f64,
    pub cost_q95: f64,
    /// Transitions whose sampled capacity is at least the worst-case one.
    pub dominated_transitions: usize,
    pub transitions: usize,
}

/// Sampled-rate traces for `n_paths` paths. Path `k` draws its uniforms from
/// seed `seed + k`; forecast errors follow `scenario_seed` on every path.
pub fn monte_carlo_lifecycle<M: RateModel + ?Sized>(
    setup: &LifecycleSetup,
    models: &M,
    dispatcher: Dispatcher,
    n_paths: usize,
    seed: u64,
    scenario_seed: u64,
) -> Result<MonteCarloSummary> {
    let n0 = setup.config.n0_periods;
    let paths: Vec<LifecycleTrace> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let u = path_uniforms(seed, k, n0);
            simulate(setup, models, dispatcher, RateDraw::Uniform(&u), scenario_seed)
        })
        .collect::<Result<_>>()?;
    let mut costs: Vec<f64> = paths.iter().map(|p| p.total_cost).collect();
    costs.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        if costs.is_empty() {
            f64::NAN
        } else {
            crate::gbt::empirical_quantile(&costs, q)
        }
    };
    let n = paths.len().max(1) as f64;
    let mut dominated = 0;
    let mut transitions = 0;
    for r in paths.iter().flat_map(|p| &p.records) {
        if let Some(w) = r.worst_case_capacity {
            transitions += 1;
            if r.capacity_out >= w {
                dominated += 1;
            }
        }
    }
    Ok(MonteCarloSummary {
        mean_life_days: paths.iter().map(|p| p.battery_life_days).sum::<f64>() / n,
        mean_cost: costs.iter().sum::<f64>() / n,
        cost_q90: pick(0.9),
        cost_q95: pick(0.95),
        dominated_transitions: dominated,
        transitions,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn efc_examples() {
        assert_eq!(period_efc(0.0, 91.0, 910.8), 0.0);
        assert_eq!(period_efc(200.0, 1.0, 100.0), 1.0);
        assert!((period_efc(728.64, 91.0, 910.8) - 36.4).abs() < 1e-9);
    }

    #[test]
    fn capacity_update_arithmetic() {
        assert!((capacity_update(800.0, 0.1, 40.0, 0.01, 91.0) - 795.09).abs() < 1e-9);
        assert_eq!(capacity_update(800.0, -0.5, 40.0, 0.0, 91.0), 800.0);
    }

    #[test]
    fn chain_coefficient_examples() {
        assert!((chain_coefficient(40, 40, 0.01).unwrap() - 1.0).abs() < 1e-15);
        assert!((chain_coefficient(1, 2, 0.1).unwrap() - 1.909_090_909_090_909).abs() < 1e-9);
        assert!(chain_coefficient(0, 2, 0.1).is_err());
        assert!(chain_coefficient(3, 2, 0.1).is_err());
        let cost = replacement_chain_cost(&vec![0.0; 40], 40, 0.01, 2e5).unwrap();
        assert!((cost - 2e5).abs() < 1e-6);
    }

    #[test]
    fn worst_case_uses_the_requested_quantile() {
        let m = ConstantRates {
            quantiles: vec![0.5, 0.9],
            cyclic: vec![0.1, 0.2],
            calendar: vec![0.01, 0.02],
        };
        let x = [800.0, 35.0, 0.4, 100.0, 100.0];
        let h5 = worst_case_capacity(&m, &x, &x[..2], 800.0, 40.0, 0.5, 91.0).unwrap();
        let h9 = worst_case_capacity(&m, &x, &x[..2], 800.0, 40.0, 0.9, 91.0).unwrap();
        assert!((h5 - 795.09).abs() < 1e-9);
        assert!(h9 <= h5);
        assert!(worst_case_capacity(&m, &x, &x[..2], 800.0, 0.0, 0.5, 91.0).unwrap() == 800.0 - 0.91);
        assert!(worst_case_capacity(&m, &x, &x[..2], 800.0, 40.0, 0.95, 91.0).is_err());
    }
}
