use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    penalty_cost, solve_dispatch, BatteryState, DayScenario, DispatchProblem, DispatchSolution, SunkState, ThetaVector,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Multiplicative forecast error model: each step's realized PV and load are
/// the nominal profile times `1 + eps`, `eps ~ N(0, sigma^2)` truncated at
/// `±3 sigma`. At step `k` the dispatcher assumes the last observed error
/// persists over the remaining horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastNoise {
    pub sigma: f64,
}

impl ForecastNoise {
    pub const NONE: ForecastNoise = ForecastNoise { sigma: 0.0 };

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma <= 0.0 {
            return 0.0;
        }
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 3.0 {
                return self.sigma * z;
            }
        }
    }

    /// Draws per-step relative errors for PV and load.
    pub fn sample_errors<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let pv = (0..steps).map(|_| self.draw(rng)).collect();
        let load = (0..steps).map(|_| self.draw(rng)).collect();
        (pv, load)
    }

    /// [`Self::sample_errors`] from a ChaCha8 stream seeded with `seed`.
    pub fn sample_errors_seeded(&self, steps: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        use rand::SeedableRng;
        self.sample_errors(steps, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }
}

/// What actually happened at one step of a dispatched day.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RealizedStep<F: Scalar> {
    pub pv: F,
    pub load: F,
    pub p_buy: F,
    pub p_sell: F,
    pub p_chg: F,
    pub p_dis: F,
    pub energy: F,
}

/// Realized trajectory and period aggregates of one rolling-horizon day.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DayOutcome<F: Scalar> {
    pub steps: Vec<RealizedStep<F>>,
    /// `sum (p_chg + p_dis) * tau`.
    pub throughput: F,
    pub band_lo: F,
    pub band_hi: F,
    pub peak_c: F,
    pub peak_d: F,
    /// Realized energy bill.
    pub operational_cost: F,
    /// Steps at which the grid had to exceed its cap to absorb forecast error.
    pub grid_cap_violations: usize,
}

impl<F: Scalar> DayOutcome<F> {
    pub fn band(&self) -> F {
        self.band_hi - self.band_lo
    }

    /// Energy bill plus the degradation penalties evaluated on the realized aggregates.
    pub fn penalized_cost(&self, theta: &ThetaVector<F>) -> F {
        self.operational_cost + penalty_cost(theta, self.throughput, self.band(), self.peak_c, self.peak_d)
    }
}

fn relative_errors<F: Scalar>(errors: Option<&[f64]>, steps: usize) -> Vec<F> {
    match errors {
        Some(e) => e.iter().map(|&v| F::of(v)).collect(),
        None => vec![F::zero(); steps],
    }
}

/// Runs a shrinking-horizon MPC over one day.
///
/// `pv_err`/`load_err` are the realized relative errors per step (see
/// [`ForecastNoise::sample_errors`]); `None` means perfect forecasts. Battery
/// set-points of the first step are committed each time; the grid absorbs
/// the difference between forecast and realized net load.
pub fn rolling_mpc<F: Scalar>(
    scenario: &DayScenario<F>,
    theta: &ThetaVector<F>,
    battery: &BatteryState<F>,
    grid_cap: F,
    pv_err: Option<&[f64]>,
    load_err: Option<&[f64]>,
) -> Result<DayOutcome<F>> {
    let horizon = scenario.len();
    let pv_err = relative_errors::<F>(pv_err, horizon);
    let load_err = relative_errors::<F>(load_err, horizon);
    if pv_err.len() != horizon || load_err.len() != horizon {
        return Err(Error::Config("forecast error series must match the day length".into()));
    }
    let one = F::one();
    let zero = F::zero();
    let real_pv: Vec<F> = (0..horizon).map(|t| (scenario.pv[t] * (one + pv_err[t])).max(zero)).collect();
    let real_load: Vec<F> = (0..horizon).map(|t| (scenario.load[t] * (one + load_err[t])).max(zero)).collect();

    let base = DispatchProblem::new(
        scenario.tau,
        scenario.pv.clone(),
        scenario.load.clone(),
        scenario.tariff.clone(),
        *theta,
        *battery,
        grid_cap,
    );
    let tau = scenario.tau;
    let mut steps = Vec::with_capacity(horizon);
    let mut energy = battery.e0;
    let mut sunk: Option<SunkState<F>> = None;
    let mut op_cost = zero;
    let mut violations = 0;
    let mut plan: Option<(usize, DispatchSolution<F>)> = None;
    for k in 0..horizon {
        // Unchanged forecasts leave the previous plan's tail optimal for the
        // shrunken problem, so it is reused instead of re-solved.
        let unchanged = k > 0 && {
            let prev = |e: &[F]| if k >= 2 { e[k - 2] } else { zero };
            pv_err[k - 1] == prev(&pv_err) && load_err[k - 1] == prev(&load_err)
        };
        let (p_chg, p_dis) = match (&plan, unchanged) {
            (Some((start, p)), true) => {
                let i = k - start;
                energy = p.energy[i];
                (p.p_chg[i], p.p_dis[i])
            }
            _ => {
                let mut problem = match sunk {
                    Some(s) => base.tail(k, energy, s),
                    None => base.clone(),
                };
                if k > 0 {
                    let (ep, el) = (pv_err[k - 1], load_err[k - 1]);
                    for v in problem.pv_forecast.iter_mut() {
                        *v = (*v * (one + ep)).max(zero);
                    }
                    for v in problem.load_forecast.iter_mut() {
                        *v = (*v * (one + el)).max(zero);
                    }
                }
                let fresh = solve_dispatch(&problem).map_err(|e| match e {
                    Error::Infeasible { .. } => Error::Infeasible { step: Some(k) },
                    other => other,
                })?;
                energy = fresh.energy[0];
                let first = (fresh.p_chg[0], fresh.p_dis[0]);
                plan = Some((k, fresh));
                first
            }
        };
        let net = real_load[k] - real_pv[k] + p_chg - p_dis;
        let (p_buy, p_sell) = if net >= zero { (net, zero) } else { (zero, -net) };
        let cap_tol = F::of(F::FEASIBILITY_TOL) * (one + grid_cap);
        if p_buy > grid_cap + cap_tol || p_sell > grid_cap + cap_tol {
            violations += 1;
        }
        op_cost += (scenario.tariff.buy[k] * p_buy - scenario.tariff.sell[k] * p_sell) * tau;
        steps.push(RealizedStep { pv: real_pv[k], load: real_load[k], p_buy, p_sell, p_chg, p_dis, energy });
        sunk = Some(match sunk {
            None => SunkState { band_lo: energy, band_hi: energy, peak_c: p_chg, peak_d: p_dis },
            Some(s) => SunkState {
                band_lo: s.band_lo.min(energy),
                band_hi: s.band_hi.max(energy),
                peak_c: s.peak_c.max(p_chg),
                peak_d: s.peak_d.max(p_dis),
            },
        });
    }
    let s = sunk.expect("day has at least one step");
    let throughput = steps.iter().map(|r| (r.p_chg + r.p_dis) * tau).sum();
    Ok(DayOutcome {
        steps,
        throughput,
        band_lo: s.band_lo,
        band_hi: s.band_hi,
        peak_c: s.peak_c,
        peak_d: s.peak_d,
        operational_cost: op_cost,
        grid_cap_violations: violations,
    })
}

/// The day with the battery held idle: grid covers the net load.
pub fn idle_day<F: Scalar>(scenario: &DayScenario<F>, battery: &BatteryState<F>, grid_cap: F) -> DayOutcome<F> {
    let zero = F::zero();
    let mut op_cost = zero;
    let mut violations = 0;
    let steps = (0..scenario.len())
        .map(|t| {
            let net = scenario.load[t] - scenario.pv[t];
            let (p_buy, p_sell) = if net >= zero { (net, zero) } else { (zero, -net) };
            if p_buy > grid_cap || p_sell > grid_cap {
                violations += 1;
            }
            op_cost += (scenario.tariff.buy[t] * p_buy - scenario.tariff.sell[t] * p_sell) * scenario.tau;
            RealizedStep {
                pv: scenario.pv[t],
                load: scenario.load[t],
                p_buy,
                p_sell,
                p_chg: zero,
                p_dis: zero,
                energy: battery.e0,
            }
        })
        .collect();
    DayOutcome {
        steps,
        throughput: zero,
        band_lo: battery.e0,
        band_hi: battery.e0,
        peak_c: zero,
        peak_d: zero,
        operational_cost: op_cost,
        grid_cap_violations: violations,
    }
}
