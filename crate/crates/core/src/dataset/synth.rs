//! Synthetic degradation data with a known quantile function.
//!
//! Median rates follow a bathtub in temperature, grow with DOD and power and
//! accelerate as capacity fades; labels carry log-normal multiplicative noise
//! whose spread widens away from the optimal temperature.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{AgingMode, DegradationSample};
use crate::error::{Error, Result};

/// Closed-form ground truth behind the synthetic labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruth {
    /// Cyclic median scale (kWh/EFC).
    pub k_cyc: f64,
    /// Calendar median scale (kWh/day).
    pub k_cal: f64,
    pub t_opt_c: f64,
    pub t_scale_c: f64,
    /// Bathtub curvature below and above `t_opt_c`.
    pub bath_cold: f64,
    pub bath_hot: f64,
    pub dod_base: f64,
    pub dod_slope: f64,
    pub power_ref_kw: f64,
    pub p_chg_coef: f64,
    pub p_dis_coef: f64,
    /// Relative acceleration per unit of fade below `capacity_ref_kwh`.
    pub accel: f64,
    pub capacity_ref_kwh: f64,
    /// Log-space noise spread at `t_opt_c`.
    pub sigma: f64,
    /// Relative growth of the spread per `t_scale_c` away from `t_opt_c`.
    pub sigma_temp_slope: f64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        Self {
            k_cyc: 0.12,
            k_cal: 0.04,
            t_opt_c: 25.0,
            t_scale_c: 25.0,
            bath_cold: 1.5,
            bath_hot: 2.0,
            dod_base: 0.6,
            dod_slope: 0.8,
            power_ref_kw: 1000.0,
            p_chg_coef: 0.25,
            p_dis_coef: 0.2,
            accel: 0.6,
            capacity_ref_kwh: 1000.0,
            sigma: 0.25,
            sigma_temp_slope: 0.5,
        }
    }
}

impl GroundTruth {
    fn bathtub(&self, temp_c: f64) -> f64 {
        let d = (temp_c - self.t_opt_c) / self.t_scale_c;
        let a = if d < 0.0 { self.bath_cold } else { self.bath_hot };
        1.0 + a * d * d
    }

    fn acceleration(&self, capacity_kwh: f64) -> f64 {
        1.0 + self.accel * ((self.capacity_ref_kwh - capacity_kwh) / self.capacity_ref_kwh).max(0.0)
    }

    /// Median rate for a feature vector in the schema of `mode`.
    pub fn median(&self, mode: AgingMode, x: &[f64]) -> f64 {
        let common = self.bathtub(x[1]) * self.acceleration(x[0]);
        match mode {
            AgingMode::Calendar => self.k_cal * common,
            AgingMode::Cyclic => {
                let stress = (self.dod_base + self.dod_slope * x[2])
                    * (1.0 + self.p_chg_coef * x[3] / self.power_ref_kw + self.p_dis_coef * x[4] / self.power_ref_kw);
                self.k_cyc * common * stress
            }
        }
    }

    /// Log-space spread of the label noise at temperature `temp_c`.
    pub fn spread(&self, temp_c: f64) -> f64 {
        self.sigma * (1.0 + self.sigma_temp_slope * (temp_c - self.t_opt_c).abs() / self.t_scale_c)
    }

    /// The `q`-quantile of the label distribution at `x`.
    pub fn quantile(&self, mode: AgingMode, x: &[f64], q: f64) -> f64 {
        let z = if self.sigma == 0.0 { 0.0 } else { Normal::standard().inverse_cdf(q) };
        self.median(mode, x) * (self.spread(x[1]) * z).exp()
    }

    /// Draws one label at `x`.
    pub fn sample<R: Rng + ?Sized>(&self, mode: AgingMode, x: &[f64], rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.median(mode, x) * (self.spread(x[1]) * z).exp()
    }

    fn validate(&self) -> Result<()> {
        let vals = [
            self.k_cyc,
            self.k_cal,
            self.t_scale_c,
            self.bath_cold,
            self.bath_hot,
            self.dod_base,
            self.dod_slope,
            self.power_ref_kw,
            self.p_chg_coef,
            self.p_dis_coef,
            self.accel,
            self.capacity_ref_kwh,
            self.sigma,
            self.sigma_temp_slope,
        ];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.t_scale_c == 0.0 || self.power_ref_kw == 0.0 {
            return Err(Error::Config("ground-truth parameters must be finite and nonnegative".into()));
        }
        if self.capacity_ref_kwh == 0.0 {
            return Err(Error::Config("capacity_ref_kwh must be positive".into()));
        }
        Ok(())
    }
}

/// Generator settings; feature ranges are sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub cyclic_fraction: f64,
    pub capacity_kwh: [f64; 2],
    pub temp_c: [f64; 2],
    pub dod: [f64; 2],
    pub p_chg_kw: [f64; 2],
    pub p_dis_kw: [f64; 2],
    /// Cycle count per cyclic interval (inclusive integer range).
    pub cycles: [u32; 2],
    /// Interval length of calendar samples (inclusive integer range).
    pub days: [u32; 2],
    pub truth: GroundTruth,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 2537,
            cyclic_fraction: 0.8,
            capacity_kwh: [250.0, 1400.0],
            temp_c: [0.0, 55.0],
            dod: [0.05, 1.0],
            p_chg_kw: [20.0, 2500.0],
            p_dis_kw: [20.0, 2500.0],
            cycles: [20, 400],
            days: [14, 180],
            truth: GroundTruth::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("capacity_kwh", self.capacity_kwh),
            ("temp_c", self.temp_c),
            ("dod", self.dod),
            ("p_chg_kw", self.p_chg_kw),
            ("p_dis_kw", self.p_dis_kw),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is degenerate")));
            }
        }
        if !(self.capacity_kwh[0] > 0.0) || !(self.dod[0] > 0.0 && self.dod[1] <= 1.0) {
            return Err(Error::Config("capacity must be positive and DOD within (0, 1]".into()));
        }
        if self.p_chg_kw[0] < 0.0 || self.p_dis_kw[0] < 0.0 {
            return Err(Error::Config("power ranges must be nonnegative".into()));
        }
        if self.cycles[0] == 0 || self.cycles[0] > self.cycles[1] || self.days[0] == 0 || self.days[0] > self.days[1] {
            return Err(Error::Config("cycle and day ranges must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.cyclic_fraction) {
            return Err(Error::Config("cyclic_fraction must lie in [0, 1]".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        self.truth.validate()
    }
}

/// Draws `config.n_samples` labelled samples; the first
/// `round(cyclic_fraction * n)` are cyclic.
pub fn generate_synthetic_fleet(config: &SyntheticConfig, seed: u64) -> Result<Vec<DegradationSample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cyc = (config.cyclic_fraction * config.n_samples as f64).round() as usize;
    let uni = |rng: &mut ChaCha8Rng, r: [f64; 2]| rng.random_range(r[0]..r[1]);
    let mut out = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let capacity = uni(&mut rng, config.capacity_kwh);
        let temp = uni(&mut rng, config.temp_c);
        if i < n_cyc {
            let dod = uni(&mut rng, config.dod);
            let p_chg = uni(&mut rng, config.p_chg_kw);
            let p_dis = uni(&mut rng, config.p_dis_kw);
            let cycles = rng.random_range(config.cycles[0]..=config.cycles[1]);
            let x = [capacity, temp, dod, p_chg, p_dis];
            let rate = config.truth.sample(AgingMode::Cyclic, &x, &mut rng);
            out.push(DegradationSample {
                capacity_kwh: capacity,
                temp_c: temp,
                dod: Some(dod),
                p_chg_kw: Some(p_chg),
                p_dis_kw: Some(p_dis),
                mode: AgingMode::Cyclic,
                rate,
                efc: Some(dod * f64::from(cycles)),
                days: None,
            });
        } else {
            let days = rng.random_range(config.days[0]..=config.days[1]);
            let rate = config.truth.sample(AgingMode::Calendar, &[capacity, temp], &mut rng);
            out.push(DegradationSample {
                capacity_kwh: capacity,
                temp_c: temp,
                dod: None,
                p_chg_kw: None,
                p_dis_kw: None,
                mode: AgingMode::Calendar,
                rate,
                efc: None,
                days: Some(f64::from(days)),
            });
        }
    }
    Ok(out)
}

/// Raw per-cell files with a planted check-up loss, for exercising
/// [`super::process_cells`]. Each condition is run on two cells with
/// different check-up spacing so the check-up loss is identifiable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellFleetConfig {
    pub c0_kwh: f64,
    pub voltage_v: f64,
    pub delta_cu_kwh: f64,
    /// Check-ups per cell.
    pub n_cu: usize,
    pub calendar_temps_c: Vec<f64>,
    /// Interval length in days for the two cells of each calendar condition.
    pub calendar_days: [u32; 2],
    /// Cyclic conditions as `(temp_c, dod, power_kw)`.
    pub cyclic_conditions: Vec<(f64, f64, f64)>,
    /// Cycles per interval for the two cells of each cyclic condition.
    pub cyclic_cycles: [u32; 2],
    pub truth: GroundTruth,
    /// Standard deviation of additive capacity measurement noise (kWh).
    pub measurement_noise_kwh: f64,
}

impl Default for CellFleetConfig {
    fn default() -> Self {
        Self {
            c0_kwh: 100.0,
            voltage_v: 400.0,
            delta_cu_kwh: 0.05,
            n_cu: 6,
            calendar_temps_c: vec![10.0, 25.0, 40.0],
            calendar_days: [7, 28],
            cyclic_conditions: vec![(25.0, 0.5, 50.0), (40.0, 0.8, 80.0), (10.0, 0.3, 30.0)],
            cyclic_cycles: [10, 40],
            truth: GroundTruth { k_cyc: 0.02, k_cal: 0.004, sigma: 0.0, ..GroundTruth::default() },
            measurement_noise_kwh: 0.002,
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn cu_row(idx: usize, c: f64, day: f64) -> String {
    // geometric mean of the two energies equals c
    format!("{idx},{},{},{day}\n", c * 1.002, c / 1.002)
}

/// Writes `<id>_cycles.csv` and `<id>_cu.csv` for every cell into `dir`.
pub fn write_synthetic_cells(dir: &Path, config: &CellFleetConfig, seed: u64) -> Result<Vec<String>> {
    if config.n_cu < 2 || !(config.c0_kwh > 0.0 && config.voltage_v > 0.0) {
        return Err(Error::Config("cell fleet needs n_cu >= 2 and positive c0/voltage".into()));
    }
    config.truth.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::new();
    let noise = |rng: &mut ChaCha8Rng| {
        let z: f64 = rng.sample(StandardNormal);
        config.measurement_noise_kwh * z
    };

    for (g, &temp) in config.calendar_temps_c.iter().enumerate() {
        for (k, &spacing) in config.calendar_days.iter().enumerate() {
            let id = format!("cal_{g}{}", ['a', 'b'][k]);
            let mut cycles = String::from("t_s,current_a,voltage_v,temp_c\n");
            let mut cu = String::from("cu_index,e_charge_kwh,e_discharge_kwh,day_offset\n");
            let mut c = config.c0_kwh;
            let total_days = spacing as usize * (config.n_cu - 1);
            for d in 0..=total_days {
                cycles.push_str(&format!("{},0,{},{temp}\n", d * 86_400, config.voltage_v));
            }
            for i in 0..config.n_cu {
                let measured = c + if i == 0 { 0.0 } else { noise(&mut rng) };
                cu.push_str(&cu_row(i, measured, f64::from(spacing) * i as f64));
                let rate = config.truth.median(AgingMode::Calendar, &[c, temp]);
                c -= rate * f64::from(spacing) + config.delta_cu_kwh;
            }
            write_text(&dir.join(format!("{id}_cycles.csv")), &cycles)?;
            write_text(&dir.join(format!("{id}_cu.csv")), &cu)?;
            ids.push(id);
        }
    }

    for (g, &(temp, dod, power)) in config.cyclic_conditions.iter().enumerate() {
        for (k, &n_cyc) in config.cyclic_cycles.iter().enumerate() {
            let id = format!("cyc_{g}{}", ['a', 'b'][k]);
            let mut cycles = String::from("t_s,current_a,voltage_v,temp_c\n");
            let mut cu = String::from("cu_index,e_charge_kwh,e_discharge_kwh,day_offset\n");
            let current = power * 1000.0 / config.voltage_v;
            // cycle depth is relative to the initial capacity
            let phase_s = (dod * config.c0_kwh / power * 3600.0).round();
            let cycle_s = 2.0 * phase_s + 1800.0;
            let interval_days = ((f64::from(n_cyc) * cycle_s) / 86_400.0).ceil() + 1.0;
            let mut c = config.c0_kwh;
            for i in 0..config.n_cu {
                let day = interval_days * i as f64;
                let measured = c + if i == 0 { 0.0 } else { noise(&mut rng) };
                cu.push_str(&cu_row(i, measured, day));
                if i + 1 == config.n_cu {
                    cycles.push_str(&format!("{},0,{},{temp}\n", day * 86_400.0, config.voltage_v));
                    break;
                }
                let mut t = day * 86_400.0 + 600.0;
                for _ in 0..n_cyc {
                    cycles.push_str(&format!("{t},{current},{},{temp}\n", config.voltage_v));
                    cycles.push_str(&format!("{},{},{},{temp}\n", t + phase_s, -current, config.voltage_v));
                    cycles.push_str(&format!("{},0,{},{temp}\n", t + 2.0 * phase_s, config.voltage_v));
                    t += cycle_s;
                }
                let efc = dod * f64::from(n_cyc);
                let rate = config.truth.median(AgingMode::Cyclic, &[c, temp, dod, power, power]);
                c -= rate * efc + config.delta_cu_kwh;
            }
            write_text(&dir.join(format!("{id}_cycles.csv")), &cycles)?;
            write_text(&dir.join(format!("{id}_cu.csv")), &cu)?;
            ids.push(id);
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let cfg = SyntheticConfig { n_samples: 50, ..SyntheticConfig::default() };
        assert_eq!(generate_synthetic_fleet(&cfg, 1).unwrap(), generate_synthetic_fleet(&cfg, 1).unwrap());
        assert_ne!(generate_synthetic_fleet(&cfg, 1).unwrap(), generate_synthetic_fleet(&cfg, 2).unwrap());
    }

    #[test]
    fn zero_noise_labels_equal_the_median() {
        let mut cfg = SyntheticConfig { n_samples: 40, ..SyntheticConfig::default() };
        cfg.truth.sigma = 0.0;
        for s in generate_synthetic_fleet(&cfg, 5).unwrap() {
            assert_eq!(s.rate, cfg.truth.median(s.mode, &s.features()));
        }
    }

    #[test]
    fn degenerate_range_is_rejected() {
        let cfg = SyntheticConfig { temp_c: [30.0, 30.0], ..SyntheticConfig::default() };
        assert!(matches!(generate_synthetic_fleet(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn bathtub_minimum_at_optimum() {
        let t = GroundTruth::default();
        let x = |temp: f64| [800.0, temp, 0.4, 1000.0, 2000.0];
        let m = |temp: f64| t.median(AgingMode::Cyclic, &x(temp));
        assert!(m(50.0) > m(35.0));
        assert!(m(5.0) > m(25.0) && m(35.0) > m(25.0));
    }

    #[test]
    fn quantiles_are_ordered() {
        let t = GroundTruth::default();
        let x = [800.0, 35.0, 0.4, 1000.0, 2000.0];
        let q = [0.1, 0.5, 0.9].map(|q| t.quantile(AgingMode::Cyclic, &x, q));
        assert!(q[0] < q[1] && q[1] < q[2]);
        assert!((q[1] - t.median(AgingMode::Cyclic, &x)).abs() < 1e-12);
    }
}
