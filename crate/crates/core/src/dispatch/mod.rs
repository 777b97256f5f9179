//! Parametric dispatch LP with degradation penalties and its rolling-horizon driver.
//!
//! Decision variables per step are grid purchase/sale, battery charge/discharge
//! power and stored energy. Four horizon-wide variables carry the stored-energy
//! band `[e_lo, e_hi]` and the charge/discharge power peaks; the penalty weights
//! in [`ThetaVector`] price throughput, band width and the two peaks against
//! the energy bill.

mod mpc;
pub mod scenario;

pub use mpc::{idle_day, rolling_mpc, DayOutcome, ForecastNoise, RealizedStep};
pub use scenario::{read_day_csv, write_day_csv, BatterySpec, DayProfile, DayScenario};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpError, Relation};
use crate::scalar::Scalar;

/// Weight added to otherwise unpriced band/peak variables so alternate optima
/// resolve toward the narrowest band and the lowest peaks.
pub const TIE_BREAK_WEIGHT: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tariff<F: Scalar> {
    pub buy: Vec<F>,
    pub sell: Vec<F>,
}

impl<F: Scalar> Tariff<F> {
    pub fn new(buy: Vec<F>, sell: Vec<F>) -> Result<Self> {
        let tariff = Self { buy, sell };
        tariff.validate()?;
        Ok(tariff)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buy.len() != self.sell.len() {
            return Err(Error::Config(format!(
                "tariff has {} buy prices but {} sell prices",
                self.buy.len(),
                self.sell.len()
            )));
        }
        for (t, (&b, &s)) in self.buy.iter().zip(&self.sell).enumerate() {
            if !(b >= F::zero() && s >= F::zero()) {
                return Err(Error::Config(format!("negative or NaN price at step {t}")));
            }
            if s > b {
                return Err(Error::Config(format!("sell price {s} exceeds buy price {b} at step {t}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.buy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buy.is_empty()
    }

    pub fn max_buy(&self) -> F {
        self.buy.iter().copied().fold(F::zero(), F::max)
    }

    fn slice(&self, from: usize) -> Self {
        Self { buy: self.buy[from..].to_vec(), sell: self.sell[from..].to_vec() }
    }
}

/// Degradation penalty weights: throughput ($/kWh), band width ($/kWh),
/// charge peak ($/kW) and discharge peak ($/kW).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ThetaVector<F: Scalar> {
    pub theta_efc: F,
    pub theta_dod: F,
    pub theta_c: F,
    pub theta_d: F,
}

impl<F: Scalar> ThetaVector<F> {
    pub fn new(theta_efc: F, theta_dod: F, theta_c: F, theta_d: F) -> Result<Self> {
        let theta = Self { theta_efc, theta_dod, theta_c, theta_d };
        if theta.to_array().iter().any(|v| !(v.is_finite() && *v >= F::zero())) {
            return Err(Error::Config(format!("penalty weights must be finite and nonnegative, got {theta:?}")));
        }
        Ok(theta)
    }

    pub fn zero() -> Self {
        Self { theta_efc: F::zero(), theta_dod: F::zero(), theta_c: F::zero(), theta_d: F::zero() }
    }

    pub fn from_array(v: [F; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [F; 4] {
        [self.theta_efc, self.theta_dod, self.theta_c, self.theta_d]
    }
}

impl ThetaVector<f64> {
    /// Parses `"a,b,c,d"`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!("theta needs 4 comma-separated values, got {text:?}")));
        }
        let mut v = [0.0; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| Error::Config(format!("bad theta component {p:?}")))?;
        }
        Self::from_array(v)
    }
}

/// Battery parameters for one dispatch horizon. The usable energy window
/// shrinks symmetrically around the rated midpoint as capacity fades.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BatteryState<F: Scalar> {
    pub rated_capacity: F,
    pub capacity_now: F,
    pub p_chg_cap: F,
    pub p_dis_cap: F,
    pub eta_c: F,
    pub eta_d: F,
    /// Initial (and terminal) stored energy of the horizon.
    pub e0: F,
}

impl<F: Scalar> BatteryState<F> {
    /// Builds a battery with `e0` at the midpoint of its energy window.
    pub fn new(rated_capacity: F, capacity_now: F, p_chg_cap: F, p_dis_cap: F, eta_c: F, eta_d: F) -> Result<Self> {
        let b = Self {
            rated_capacity,
            capacity_now,
            p_chg_cap,
            p_dis_cap,
            eta_c,
            eta_d,
            e0: rated_capacity * F::half(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_capacity(mut self, capacity_now: F) -> Self {
        self.capacity_now = capacity_now;
        self
    }

    pub fn e_lower(&self) -> F {
        (self.rated_capacity - self.capacity_now) * F::half()
    }

    pub fn e_upper(&self) -> F {
        (self.rated_capacity + self.capacity_now) * F::half()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rated_capacity > F::zero()) {
            return Err(Error::Config("rated capacity must be positive".into()));
        }
        if !(self.p_chg_cap >= F::zero() && self.p_dis_cap >= F::zero()) {
            return Err(Error::Config("power caps must be nonnegative".into()));
        }
        for (name, eta) in [("eta_c", self.eta_c), ("eta_d", self.eta_d)] {
            if !(eta > F::zero() && eta <= F::one()) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {eta}")));
            }
        }
        Ok(())
    }
}

/// Realized band and peaks already committed earlier in a shrinking horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SunkState<F> {
    pub band_lo: F,
    pub band_hi: F,
    pub peak_c: F,
    pub peak_d: F,
}

#[derive(Clone, Debug)]
pub struct DispatchProblem<F: Scalar> {
    pub tau: F,
    pub pv_forecast: Vec<F>,
    pub load_forecast: Vec<F>,
    pub tariff: Tariff<F>,
    pub theta: ThetaVector<F>,
    pub battery: BatteryState<F>,
    pub grid_cap: F,
    /// Stored energy before the first step; the terminal target is `battery.e0`.
    pub e_start: F,
    pub sunk: Option<SunkState<F>>,
}

impl<F: Scalar> DispatchProblem<F> {
    pub fn new(
        tau: F,
        pv_forecast: Vec<F>,
        load_forecast: Vec<F>,
        tariff: Tariff<F>,
        theta: ThetaVector<F>,
        battery: BatteryState<F>,
        grid_cap: F,
    ) -> Self {
        let e_start = battery.e0;
        Self { tau, pv_forecast, load_forecast, tariff, theta, battery, grid_cap, e_start, sunk: None }
    }

    pub fn horizon(&self) -> usize {
        self.load_forecast.len()
    }

    /// The problem restricted to steps `from..`, starting from `e_start`.
    pub fn tail(&self, from: usize, e_start: F, sunk: SunkState<F>) -> Self {
        Self {
            tau: self.tau,
            pv_forecast: self.pv_forecast[from..].to_vec(),
            load_forecast: self.load_forecast[from..].to_vec(),
            tariff: self.tariff.slice(from),
            theta: self.theta,
            battery: self.battery,
            grid_cap: self.grid_cap,
            e_start,
            sunk: Some(sunk),
        }
    }

    fn validate(&self) -> Result<()> {
        let t = self.horizon();
        if t == 0 {
            return Err(Error::Config("dispatch horizon must have at least one step".into()));
        }
        if !(self.tau > F::zero()) {
            return Err(Error::Config("step length tau must be positive".into()));
        }
        if self.pv_forecast.len() != t || self.tariff.len() != t {
            return Err(Error::Config(format!(
                "series lengths differ: load {t}, pv {}, tariff {}",
                self.pv_forecast.len(),
                self.tariff.len()
            )));
        }
        if self.pv_forecast.iter().chain(&self.load_forecast).any(|v| !(*v >= F::zero())) {
            return Err(Error::Config("forecasts must be nonnegative".into()));
        }
        self.tariff.validate()?;
        self.battery.validate()?;
        if self.battery.e_lower() > self.battery.e_upper() {
            return Err(Error::Config(format!(
                "energy window is empty: lower {} exceeds upper {}",
                self.battery.e_lower(),
                self.battery.e_upper()
            )));
        }
        if !(self.grid_cap >= F::zero()) {
            return Err(Error::Config("grid capacity must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Column layout of the dispatch LP: five per-step blocks then four scalars.
#[derive(Clone, Copy, Debug)]
pub struct VarLayout {
    pub horizon: usize,
}

impl VarLayout {
    pub fn buy(&self, t: usize) -> usize {
        t
    }
    pub fn sell(&self, t: usize) -> usize {
        self.horizon + t
    }
    pub fn charge(&self, t: usize) -> usize {
        2 * self.horizon + t
    }
    pub fn discharge(&self, t: usize) -> usize {
        3 * self.horizon + t
    }
    pub fn energy(&self, t: usize) -> usize {
        4 * self.horizon + t
    }
    pub fn band_lo(&self) -> usize {
        5 * self.horizon
    }
    pub fn band_hi(&self) -> usize {
        5 * self.horizon + 1
    }
    pub fn peak_c(&self) -> usize {
        5 * self.horizon + 2
    }
    pub fn peak_d(&self) -> usize {
        5 * self.horizon + 3
    }
    pub fn num_vars(&self) -> usize {
        5 * self.horizon + 4
    }
}

pub struct DispatchLp<F: Scalar> {
    pub lp: LinearProgram<F>,
    pub layout: VarLayout,
}

/// Assembles the dispatch LP. Energy prices are charged per step as
/// `price * power * tau`.
pub fn build_lp<F: Scalar>(problem: &DispatchProblem<F>) -> Result<DispatchLp<F>> {
    problem.validate()?;
    let horizon = problem.horizon();
    let layout = VarLayout { horizon };
    let tau = problem.tau;
    let theta = &problem.theta;
    let bat = &problem.battery;
    let (e_min, e_max) = (bat.e_lower(), bat.e_upper());
    let eps = F::of(TIE_BREAK_WEIGHT);
    let zero = F::zero();

    let mut lp = LinearProgram::new();
    for t in 0..horizon {
        lp.add_var(problem.tariff.buy[t] * tau, zero, problem.grid_cap);
    }
    for t in 0..horizon {
        lp.add_var(-problem.tariff.sell[t] * tau, zero, problem.grid_cap);
    }
    for _ in 0..horizon {
        lp.add_var(theta.theta_efc * tau, zero, bat.p_chg_cap);
    }
    for _ in 0..horizon {
        lp.add_var(theta.theta_efc * tau, zero, bat.p_dis_cap);
    }
    for t in 0..horizon {
        if t + 1 == horizon {
            lp.add_var(zero, bat.e0, bat.e0);
        } else {
            lp.add_var(zero, e_min, e_max);
        }
    }
    let sunk = problem.sunk;
    let band_w = if theta.theta_dod > zero { theta.theta_dod } else { eps };
    let lo_cap = sunk.map_or(e_max, |s| s.band_lo.min(e_max));
    let hi_floor = sunk.map_or(e_min, |s| s.band_hi.max(e_min));
    lp.add_var(-band_w, e_min, lo_cap);
    lp.add_var(band_w, hi_floor, e_max);
    let pc_w = if theta.theta_c > zero { theta.theta_c } else { eps };
    let pd_w = if theta.theta_d > zero { theta.theta_d } else { eps };
    lp.add_var(pc_w, sunk.map_or(zero, |s| s.peak_c.min(bat.p_chg_cap)), bat.p_chg_cap);
    lp.add_var(pd_w, sunk.map_or(zero, |s| s.peak_d.min(bat.p_dis_cap)), bat.p_dis_cap);

    let one = F::one();
    for t in 0..horizon {
        // power balance
        lp.add_row(
            vec![
                (layout.buy(t), one),
                (layout.sell(t), -one),
                (layout.charge(t), -one),
                (layout.discharge(t), one),
            ],
            Relation::Eq,
            problem.load_forecast[t] - problem.pv_forecast[t],
        );
        // energy dynamics
        let mut coeffs = vec![
            (layout.energy(t), one),
            (layout.charge(t), -tau * bat.eta_c),
            (layout.discharge(t), tau / bat.eta_d),
        ];
        let rhs = if t == 0 {
            problem.e_start
        } else {
            coeffs.push((layout.energy(t - 1), -one));
            zero
        };
        lp.add_row(coeffs, Relation::Eq, rhs);
        // band
        lp.add_row(vec![(layout.energy(t), one), (layout.band_hi(), -one)], Relation::Le, zero);
        lp.add_row(vec![(layout.band_lo(), one), (layout.energy(t), -one)], Relation::Le, zero);
        // peaks
        lp.add_row(vec![(layout.charge(t), one), (layout.peak_c(), -one)], Relation::Le, zero);
        lp.add_row(vec![(layout.discharge(t), one), (layout.peak_d(), -one)], Relation::Le, zero);
    }
    lp.add_row(vec![(layout.band_lo(), one), (layout.band_hi(), -one)], Relation::Le, zero);
    Ok(DispatchLp { lp, layout })
}

/// Optimal schedule over one horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DispatchSolution<F: Scalar> {
    pub p_buy: Vec<F>,
    pub p_sell: Vec<F>,
    pub p_chg: Vec<F>,
    pub p_dis: Vec<F>,
    pub energy: Vec<F>,
    pub band_lo: F,
    pub band_hi: F,
    pub peak_c: F,
    pub peak_d: F,
    /// Full penalized objective (energy bill plus the four penalty terms).
    pub objective: F,
    /// Energy bill alone.
    pub operational_cost: F,
}

impl<F: Scalar> DispatchSolution<F> {
    pub fn throughput(&self, tau: F) -> F {
        self.p_chg.iter().zip(&self.p_dis).map(|(&c, &d)| (c + d) * tau).sum()
    }
}

/// Energy bill of a schedule.
pub fn operational_cost<F: Scalar>(tariff: &Tariff<F>, tau: F, p_buy: &[F], p_sell: &[F]) -> F {
    (0..p_buy.len())
        .map(|t| (tariff.buy[t] * p_buy[t] - tariff.sell[t] * p_sell[t]) * tau)
        .sum()
}

/// Sum of the four degradation penalty terms.
pub fn penalty_cost<F: Scalar>(theta: &ThetaVector<F>, throughput: F, band: F, peak_c: F, peak_d: F) -> F {
    theta.theta_efc * throughput + theta.theta_dod * band + theta.theta_c * peak_c + theta.theta_d * peak_d
}

/// Builds and solves the dispatch LP over the problem's whole horizon.
pub fn solve_dispatch<F: Scalar>(problem: &DispatchProblem<F>) -> Result<DispatchSolution<F>> {
    let DispatchLp { lp, layout } = build_lp(problem)?;
    let sol = lp.solve().map_err(|e| match e {
        LpError::Infeasible => Error::Infeasible { step: None },
        other => Error::Solver(other),
    })?;
    let x = &sol.x;
    let h = layout.horizon;
    let pick = |f: &dyn Fn(usize) -> usize| (0..h).map(|t| x[f(t)]).collect::<Vec<F>>();
    let p_buy = pick(&|t| layout.buy(t));
    let p_sell = pick(&|t| layout.sell(t));
    let p_chg = pick(&|t| layout.charge(t));
    let p_dis = pick(&|t| layout.discharge(t));
    let energy = pick(&|t| layout.energy(t));
    let (band_lo, band_hi) = (x[layout.band_lo()], x[layout.band_hi()]);
    let (peak_c, peak_d) = (x[layout.peak_c()], x[layout.peak_d()]);
    let op = operational_cost(&problem.tariff, problem.tau, &p_buy, &p_sell);
    let mut solution = DispatchSolution {
        p_buy,
        p_sell,
        p_chg,
        p_dis,
        energy,
        band_lo,
        band_hi,
        peak_c,
        peak_d,
        objective: F::zero(),
        operational_cost: op,
    };
    let throughput = solution.throughput(problem.tau);
    solution.objective = op + penalty_cost(&problem.theta, throughput, band_hi - band_lo, peak_c, peak_d);
    Ok(solution)
}

/// Largest violation of the dispatch constraints by `sol`, re-evaluated directly.
pub fn constraint_violation<F: Scalar>(problem: &DispatchProblem<F>, sol: &DispatchSolution<F>) -> F {
    let bat = &problem.battery;
    let (e_min, e_max) = (bat.e_lower(), bat.e_upper());
    let mut worst = F::zero();
    let mut bump = |v: F| worst = worst.max(v);
    let mut prev = problem.e_start;
    for t in 0..problem.horizon() {
        for v in [sol.p_buy[t], sol.p_sell[t], sol.p_chg[t], sol.p_dis[t]] {
            bump(-v);
        }
        let balance = sol.p_buy[t] + sol.p_dis[t] + problem.pv_forecast[t]
            - sol.p_sell[t]
            - sol.p_chg[t]
            - problem.load_forecast[t];
        bump(balance.abs());
        let dyn_res = sol.energy[t] - prev - sol.p_chg[t] * problem.tau * bat.eta_c + sol.p_dis[t] * problem.tau / bat.eta_d;
        bump(dyn_res.abs());
        prev = sol.energy[t];
        bump(sol.band_lo - sol.energy[t]);
        bump(sol.energy[t] - sol.band_hi);
        bump(sol.p_chg[t] - sol.peak_c);
        bump(sol.p_dis[t] - sol.peak_d);
        bump(sol.p_buy[t] - problem.grid_cap);
        bump(sol.p_sell[t] - problem.grid_cap);
    }
    bump((prev - bat.e0).abs());
    bump(e_min - sol.band_lo);
    bump(sol.band_lo - sol.band_hi);
    bump(sol.band_hi - e_max);
    bump(sol.peak_c - bat.p_chg_cap);
    bump(sol.peak_d - bat.p_dis_cap);
    worst
}

/// Degradation-model input `(C, T, DOD, p_chg_peak, p_dis_peak)` for a
/// dispatched period. `floors` clamps each feature from below.
pub fn aggregates_to_features<F: Scalar>(
    band: F,
    peak_c: F,
    peak_d: F,
    battery: &BatteryState<F>,
    ambient: F,
    floors: Option<&[F]>,
) -> [F; 5] {
    let mut x = [battery.capacity_now, ambient, band / battery.rated_capacity, peak_c, peak_d];
    if let Some(floors) = floors {
        for (k, v) in x.iter_mut().enumerate().skip(2) {
            if let Some(&f) = floors.get(k) {
                *v = v.max(f);
            }
        }
    }
    x
}
