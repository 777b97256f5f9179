//! Penalty tuning by particle swarm and the comparison policies.

mod pso;

pub use pso::{pso_optimize, IterationLog, PsoConfig, PsoResult};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::AgingMode;
use crate::dispatch::{rolling_mpc, ThetaVector};
use crate::error::{Error, Result};
use crate::lifecycle::{
    monte_carlo_lifecycle, path_uniforms, simulate, Dispatcher, LifecycleSetup, LifecycleTrace, MonteCarloSummary,
    RateDraw, RateModel,
};

/// Pre-sampled degradation paths behind the risk-neutral objective.
pub const SP_PATHS: usize = 5;

/// Offset separating the risk-neutral tuning paths from evaluation paths.
pub const SP_SEED_OFFSET: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Benchmark,
    Sp,
    Ro,
    NoUsage,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Benchmark, PolicyKind::Sp, PolicyKind::Ro, PolicyKind::NoUsage];

    pub fn needs_theta(self) -> bool {
        matches!(self, PolicyKind::Sp | PolicyKind::Ro)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Benchmark => "benchmark",
            PolicyKind::Sp => "sp",
            PolicyKind::Ro => "ro",
            PolicyKind::NoUsage => "nousage",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benchmark" => Ok(PolicyKind::Benchmark),
            "sp" => Ok(PolicyKind::Sp),
            "ro" => Ok(PolicyKind::Ro),
            "nousage" | "no_usage" | "no-usage" => Ok(PolicyKind::NoUsage),
            other => Err(Error::Config(format!("unknown policy '{other}'; expected benchmark, sp, ro or nousage"))),
        }
    }
}

/// Upper corner of the θ search box: per-kWh penalties up to the highest buy
/// price, per-kW penalties up to that price times one day.
pub fn theta_upper_bounds(setup: &LifecycleSetup) -> [f64; 4] {
    let p = setup.max_buy_price();
    let pp = setup.max_power_price();
    [p, p, pp, pp]
}

/// Worst-case life-cycle cost: every transition takes the configured quantile.
pub fn robust_objective<M: RateModel + ?Sized>(
    theta: &ThetaVector<f64>,
    setup: &LifecycleSetup,
    models: &M,
    seed: u64,
) -> Result<f64> {
    let draw = RateDraw::Quantile(setup.config.quantile);
    Ok(simulate(setup, models, Dispatcher::Mpc(*theta), draw, seed)?.total_cost)
}

/// Mean life-cycle cost over `paths` fixed sampled-rate paths.
pub fn risk_neutral_objective<M: RateModel + ?Sized>(
    theta: &ThetaVector<f64>,
    setup: &LifecycleSetup,
    models: &M,
    paths: &[Vec<f64>],
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for u in paths {
        total += simulate(setup, models, Dispatcher::Mpc(*theta), RateDraw::Uniform(u), seed)?.total_cost;
    }
    Ok(total / paths.len().max(1) as f64)
}

fn sp_paths(setup: &LifecycleSetup, seed: u64) -> Vec<Vec<f64>> {
    (0..SP_PATHS).map(|k| path_uniforms(seed.wrapping_add(SP_SEED_OFFSET), k, setup.config.n0_periods)).collect()
}

/// Components of the tuning-time estimate `particles x iterations x mean life
/// x dispatched days per period x seconds per dispatched day`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub n_particles: usize,
    pub n_iterations: usize,
    pub evaluations: usize,
    pub paths_per_evaluation: usize,
    pub mean_life_periods: f64,
    pub dispatched_days_per_period: usize,
    pub mpc_day_seconds: f64,
    pub predicted_seconds: f64,
    pub measured_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub policy: PolicyKind,
    pub theta: ThetaVector<f64>,
    pub cost: f64,
    pub pso: Option<PsoResult>,
    pub runtime: Option<RuntimeReport>,
}

/// Mean wall time of one rolling day over the four seasons at full capacity.
fn time_mpc_day(setup: &LifecycleSetup, theta: &ThetaVector<f64>) -> Result<f64> {
    let battery = setup.battery()?;
    let start = Instant::now();
    for day in &setup.days {
        rolling_mpc(day, theta, &battery, setup.config.battery.grid_cap_kw, None, None)?;
    }
    Ok(start.elapsed().as_secs_f64() / setup.days.len() as f64)
}

/// Tunes θ for `kind`. Benchmark and NoUsage return θ = 0 without search.
pub fn tune_policy<M: RateModel + ?Sized>(
    kind: PolicyKind,
    setup: &LifecycleSetup,
    models: &M,
    pso: &PsoConfig,
    seed: u64,
) -> Result<TuneOutcome> {
    if !kind.needs_theta() {
        let cost = match kind {
            PolicyKind::Benchmark => robust_objective(&ThetaVector::zero(), setup, models, seed)?,
            _ => simulate(setup, models, Dispatcher::Idle, RateDraw::Quantile(setup.config.quantile), seed)?.total_cost,
        };
        return Ok(TuneOutcome { policy: kind, theta: ThetaVector::zero(), cost, pso: None, runtime: None });
    }
    let upper = match &pso.upper {
        Some(u) if u.len() == 4 => u.clone(),
        Some(u) => return Err(Error::Config(format!("pso upper bounds need 4 entries, got {}", u.len()))),
        None => theta_upper_bounds(setup).to_vec(),
    };
    let paths = if kind == PolicyKind::Sp { sp_paths(setup, seed) } else { vec![] };
    let mpc_day_seconds = time_mpc_day(setup, &ThetaVector::zero())?;
    let life_sum = std::sync::Mutex::new((0usize, 0usize));
    let objective = |x: &[f64]| -> f64 {
        let Ok(theta) = ThetaVector::new(x[0], x[1], x[2], x[3]) else {
            return f64::NAN;
        };
        let run = || -> Result<(f64, usize)> {
            match kind {
                PolicyKind::Ro => {
                    let draw = RateDraw::Quantile(setup.config.quantile);
                    let t = simulate(setup, models, Dispatcher::Mpc(theta), draw, seed)?;
                    Ok((t.total_cost, t.battery_life_periods))
                }
                _ => {
                    let mut cost = 0.0;
                    let mut life = 0;
                    for u in &paths {
                        let t = simulate(setup, models, Dispatcher::Mpc(theta), RateDraw::Uniform(u), seed)?;
                        cost += t.total_cost;
                        life += t.battery_life_periods;
                    }
                    Ok((cost / paths.len() as f64, life / paths.len()))
                }
            }
        };
        match run() {
            Ok((cost, life)) => {
                let mut s = life_sum.lock().unwrap();
                s.0 += life;
                s.1 += 1;
                cost
            }
            Err(e) => {
                log::warn!("θ {x:?} could not be evaluated: {e}");
                f64::NAN
            }
        }
    };
    let config = PsoConfig { seed: pso.seed.wrapping_add(seed), ..pso.clone() };
    let start = Instant::now();
    let result = pso_optimize(objective, &[0.0; 4], &upper, &config)?;
    let measured_seconds = start.elapsed().as_secs_f64();
    if !result.best_cost.is_finite() {
        return Err(Error::Config("no θ in the search box produced a finite cost".into()));
    }
    let (life_total, runs) = *life_sum.lock().unwrap();
    let mean_life_periods = life_total as f64 / runs.max(1) as f64;
    let paths_per_evaluation = paths.len().max(1);
    let runtime = RuntimeReport {
        n_particles: config.n_particles,
        n_iterations: config.n_iterations,
        evaluations: result.evaluations,
        paths_per_evaluation,
        mean_life_periods,
        dispatched_days_per_period: 1,
        mpc_day_seconds,
        predicted_seconds: result.evaluations as f64 * paths_per_evaluation as f64 * mean_life_periods * mpc_day_seconds,
        measured_seconds,
    };
    log::info!(
        "runtime: {} evaluations x {} paths x {:.1} periods x {:.4} s/day = {:.1} s predicted, {:.1} s measured",
        runtime.evaluations,
        paths_per_evaluation,
        mean_life_periods,
        mpc_day_seconds,
        runtime.predicted_seconds,
        measured_seconds
    );
    Ok(TuneOutcome {
        policy: kind,
        theta: ThetaVector::from_array([
            result.best_position[0],
            result.best_position[1],
            result.best_position[2],
            result.best_position[3],
        ])?,
        cost: result.best_cost,
        pso: Some(result),
        runtime: Some(runtime),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub policy: PolicyKind,
    pub theta: Option<ThetaVector<f64>>,
    /// Worst-case life-cycle cost at q = 0.9 and q = 0.95.
    pub cost_q90: f64,
    pub cost_q95: f64,
    pub worst_case: LifecycleTrace,
    pub monte_carlo: MonteCarloSummary,
}

impl PolicyEvaluation {
    pub fn mean_life_days(&self) -> f64 {
        self.monte_carlo.mean_life_days
    }
}

/// Worst-case traces at q = 0.9 and 0.95 and `mc_paths` sampled-rate paths,
/// all sharing `seed` for the forecast errors.
pub fn evaluate_policy<M: RateModel + ?Sized>(
    kind: PolicyKind,
    theta: Option<&ThetaVector<f64>>,
    setup: &LifecycleSetup,
    models: &M,
    mc_paths: usize,
    seed: u64,
) -> Result<PolicyEvaluation> {
    let (dispatcher, theta) = match kind {
        PolicyKind::NoUsage => (Dispatcher::Idle, None),
        PolicyKind::Benchmark => (Dispatcher::Mpc(ThetaVector::zero()), Some(ThetaVector::zero())),
        _ => {
            let t = *theta.ok_or_else(|| Error::Config(format!("policy {kind} needs a θ vector")))?;
            (Dispatcher::Mpc(t), Some(t))
        }
    };
    let worst90 = simulate(setup, models, dispatcher, RateDraw::Quantile(0.9), seed)?;
    let worst95 = simulate(setup, models, dispatcher, RateDraw::Quantile(0.95), seed)?;
    let monte_carlo = monte_carlo_lifecycle(setup, models, dispatcher, mc_paths, seed, seed)?;
    Ok(PolicyEvaluation {
        policy: kind,
        theta,
        cost_q90: worst90.total_cost,
        cost_q95: worst95.total_cost,
        worst_case: worst90,
        monte_carlo,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Quantile,
    Temperature,
    Capacity,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Quantile => "quantile",
            SweepAxis::Temperature => "temperature",
            SweepAxis::Capacity => "capacity",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quantile" => Ok(SweepAxis::Quantile),
            "temperature" => Ok(SweepAxis::Temperature),
            "capacity" => Ok(SweepAxis::Capacity),
            other => Err(Error::Config(format!("unknown axis '{other}'; expected quantile, temperature or capacity"))),
        }
    }
}

/// `setup` with the swept parameter set to `value`.
pub fn sweep_setup<M: RateModel + ?Sized>(
    setup: &LifecycleSetup,
    models: &M,
    axis: SweepAxis,
    value: f64,
) -> Result<LifecycleSetup> {
    let mut out = setup.clone();
    match axis {
        SweepAxis::Quantile => {
            models.quantile_index(AgingMode::Cyclic, value)?;
            models.quantile_index(AgingMode::Calendar, value)?;
            out.config.quantile = value;
        }
        SweepAxis::Temperature => {
            check_range(models, 1, value, "temperature")?;
            out.config.ambient_c_per_season = [value; 4];
        }
        SweepAxis::Capacity => {
            check_range(models, 0, value, "capacity")?;
            out.config.c0_kwh = value;
        }
    }
    out.config.validate()?;
    Ok(out)
}

fn check_range<M: RateModel + ?Sized>(models: &M, feature: usize, value: f64, what: &str) -> Result<()> {
    for mode in [AgingMode::Cyclic, AgingMode::Calendar] {
        if let Some((lo, hi)) = models.feature_bounds(mode) {
            if value < lo[feature] || value > hi[feature] {
                return Err(Error::Config(format!(
                    "{what} {value} lies outside the {mode} model's training range [{}, {}]",
                    lo[feature], hi[feature]
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub theta: ThetaVector<f64>,
    /// Best worst-case cost over every θ tuned in the sweep.
    pub objective: f64,
    /// Cost of the θ tuned at this value alone.
    pub tuned_objective: f64,
    pub mean_life_days: f64,
}

/// Re-tunes the robust policy at each value. Every tuned θ is then
/// re-evaluated at every value and the cheapest kept, so a swarm that
/// stalls at one value can borrow a neighbour's solution.
pub fn sensitivity_sweep<M: RateModel + ?Sized>(
    axis: SweepAxis,
    values: &[f64],
    setup: &LifecycleSetup,
    models: &M,
    pso: &PsoConfig,
    mc_paths: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let setups: Vec<LifecycleSetup> =
        values.iter().map(|&v| sweep_setup(setup, models, axis, v)).collect::<Result<_>>()?;
    let mut tuned = Vec::with_capacity(values.len());
    for (v, s) in values.iter().zip(&setups) {
        log::info!("sweep {axis} = {v}: tuning");
        tuned.push(tune_policy(PolicyKind::Ro, s, models, pso, seed)?);
    }
    let thetas: Vec<ThetaVector<f64>> = tuned.iter().map(|t| t.theta).collect();
    let mut rows = Vec::with_capacity(values.len());
    for (k, s) in setups.iter().enumerate() {
        let costs: Vec<f64> = thetas
            .par_iter()
            .enumerate()
            .map(|(j, th)| if j == k { Ok(tuned[k].cost) } else { robust_objective(th, s, models, seed) })
            .collect::<Result<_>>()?;
        let mut best = k;
        for (j, &c) in costs.iter().enumerate() {
            if c < costs[best] {
                best = j;
            }
        }
        let mc = monte_carlo_lifecycle(s, models, Dispatcher::Mpc(thetas[best]), mc_paths, seed, seed)?;
        rows.push(SweepRow {
            value: values[k],
            theta: thetas[best],
            objective: costs[best],
            tuned_objective: tuned[k].cost,
            mean_life_days: mc.mean_life_days,
        });
    }
    Ok(rows)
}
