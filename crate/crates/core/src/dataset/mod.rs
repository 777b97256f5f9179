//! Degradation samples: interval metrics, labels, CSV interchange and splitting.

mod process;
pub mod synth;

pub use process::{fit_cu_offset, process_cells, CuInterval, Processed};
pub use synth::{generate_synthetic_fleet, write_synthetic_cells, CellFleetConfig, GroundTruth, SyntheticConfig};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgingMode {
    Calendar,
    Cyclic,
}

impl AgingMode {
    /// Number of model features for this mode.
    pub fn num_features(self) -> usize {
        match self {
            AgingMode::Calendar => 2,
            AgingMode::Cyclic => 5,
        }
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            AgingMode::Calendar => &["capacity_kwh", "temp_c"],
            AgingMode::Cyclic => &["capacity_kwh", "temp_c", "dod", "p_chg_kw", "p_dis_kw"],
        }
    }
}

impl fmt::Display for AgingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgingMode::Calendar => "calendar",
            AgingMode::Cyclic => "cyclic",
        })
    }
}

impl FromStr for AgingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calendar" => Ok(AgingMode::Calendar),
            "cyclic" => Ok(AgingMode::Cyclic),
            other => Err(Error::Config(format!("unknown aging mode {other:?}"))),
        }
    }
}

/// One check-up-to-check-up aging interval. Rates are kWh/day for calendar
/// samples and kWh/EFC for cyclic samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSample {
    pub capacity_kwh: f64,
    pub temp_c: f64,
    pub dod: Option<f64>,
    pub p_chg_kw: Option<f64>,
    pub p_dis_kw: Option<f64>,
    pub mode: AgingMode,
    pub rate: f64,
    pub efc: Option<f64>,
    pub days: Option<f64>,
}

impl DegradationSample {
    /// Feature vector in the schema of `self.mode`.
    pub fn features(&self) -> Vec<f64> {
        match self.mode {
            AgingMode::Calendar => vec![self.capacity_kwh, self.temp_c],
            AgingMode::Cyclic => vec![
                self.capacity_kwh,
                self.temp_c,
                self.dod.unwrap_or(f64::NAN),
                self.p_chg_kw.unwrap_or(f64::NAN),
                self.p_dis_kw.unwrap_or(f64::NAN),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Data(format!("{what} in sample {self:?}")));
        if !(self.capacity_kwh > 0.0) {
            return bad("non-positive capacity");
        }
        if !self.rate.is_finite() || !self.temp_c.is_finite() {
            return bad("non-finite label or temperature");
        }
        match self.mode {
            AgingMode::Cyclic => {
                match self.dod {
                    Some(d) if d > 0.0 && d <= 1.0 => {}
                    _ => return bad("cyclic DOD outside (0, 1]"),
                }
                if !matches!((self.p_chg_kw, self.p_dis_kw), (Some(c), Some(d)) if c.is_finite() && d.is_finite()) {
                    return bad("missing power feature");
                }
            }
            AgingMode::Calendar => {
                if self.dod.is_some() {
                    return bad("calendar sample with DOD");
                }
            }
        }
        Ok(())
    }
}

/// Capacity from check-up energies: geometric mean of charge and discharge energy.
pub fn compute_capacity<F: Scalar>(e_charge: F, e_discharge: F) -> Result<F> {
    if !(e_charge > F::zero() && e_discharge > F::zero()) {
        return Err(Error::Domain(format!("check-up energies must be positive, got {e_charge} and {e_discharge}")));
    }
    Ok((e_charge * e_discharge).sqrt())
}

/// Cycle depth relative to the initial capacity. Ratios above one (measurement
/// noise) are clamped to one with a warning.
pub fn compute_dod<F: Scalar>(e_charge_cyc: F, e_discharge_cyc: F, c0: F) -> Result<F> {
    if !(c0 > F::zero()) {
        return Err(Error::Domain(format!("initial capacity must be positive, got {c0}")));
    }
    if !(e_charge_cyc > F::zero() && e_discharge_cyc > F::zero()) {
        return Err(Error::Domain("cycle energies must be positive".into()));
    }
    let dod = (e_charge_cyc * e_discharge_cyc).sqrt() / c0;
    if dod > F::one() {
        log::warn!("DOD ratio {dod} exceeds 1, clamped");
        return Ok(F::one());
    }
    Ok(dod)
}

/// Average daily capacity loss net of check-up induced loss `delta_cu * n_cu`.
pub fn calendar_rate<F: Scalar>(c_i: F, c_next: F, n_days: F, n_cu: F, delta_cu: F) -> Result<F> {
    if !(n_days > F::zero()) {
        return Err(Error::Domain(format!("interval length must be positive, got {n_days} days")));
    }
    Ok((c_i - c_next - delta_cu * n_cu) / n_days)
}

pub fn equivalent_full_cycles<F: Scalar>(dod: F, n_cycles: F) -> F {
    dod * n_cycles
}

/// Capacity loss per equivalent full cycle.
pub fn cyclic_rate<F: Scalar>(c_i: F, c_next: F, dod: F, n_cycles: F) -> Result<F> {
    let efc = equivalent_full_cycles(dod, n_cycles);
    if !(efc > F::zero()) {
        return Err(Error::Domain(format!("interval has {efc} equivalent full cycles")));
    }
    Ok((c_i - c_next) / efc)
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<DegradationSample>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<DegradationSample>().enumerate() {
        let s = row.map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 2)))?;
        s.validate().map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 2)))?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_samples_csv(path: &Path, samples: &[DegradationSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if samples.is_empty() {
        w.write_record(["capacity_kwh", "temp_c", "dod", "p_chg_kw", "p_dis_kw", "mode", "rate", "efc", "days"])?;
    }
    for s in samples {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Seeded Fisher-Yates permutation of `0..n` (Durstenfeld, high index first).
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Sizes of a train/validation/test partition: the first two are
/// `floor(f * n)`, the test set takes the remainder.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must be nonnegative and sum to 1, got {fractions:?}")));
    }
    let train = ((fractions[0] * n as f64) + 1e-9).floor() as usize;
    let val = (((fractions[1] * n as f64) + 1e-9).floor() as usize).min(n - train);
    Ok([train, val, n - train - val])
}

pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles with [`shuffled_indices`] and cuts into train/validation/test.
pub fn split_dataset<T: Clone>(samples: &[T], fractions: [f64; 3], seed: u64) -> Result<Split<T>> {
    if samples.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let [n_train, n_val, _] = split_sizes(samples.len(), fractions)?;
    let idx = shuffled_indices(samples.len(), seed);
    let take = |r: &[usize]| r.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: take(&idx[..n_train]),
        validation: take(&idx[n_train..n_train + n_val]),
        test: take(&idx[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_examples() {
        assert_eq!(compute_capacity(4.0, 9.0).unwrap(), 6.0);
        assert_eq!(compute_capacity(910.8, 910.8).unwrap(), 910.8);
        assert!(matches!(compute_capacity(0.0, 1.0), Err(Error::Domain(_))));
        assert!(compute_capacity(-1.0f32, 1.0).is_err());
    }

    #[test]
    fn dod_examples() {
        assert!((compute_dod(4.0f64, 4.0, 10.0).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(compute_dod(7.0, 7.0, 7.0).unwrap(), 1.0);
        assert_eq!(compute_dod(11.0, 12.0, 10.0).unwrap(), 1.0);
        assert!(compute_dod(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn rate_examples() {
        assert!((calendar_rate(800.0f64, 799.0, 10.0, 0.0, 0.05).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(calendar_rate(5.0, 5.0, 3.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(calendar_rate(5.0, 4.0, 0.0, 0.0, 0.0).is_err());
        assert!((cyclic_rate(800.0f64, 796.0, 0.4, 100.0).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(equivalent_full_cycles(0.4, 100.0), 40.0);
        assert!(cyclic_rate(800.0, 796.0, 0.0, 100.0).is_err());
    }

    #[test]
    fn split_sizes_of_full_dataset() {
        assert_eq!(split_sizes(2537, [0.6, 0.2, 0.2]).unwrap(), [1522, 507, 508]);
        assert_eq!(split_sizes(1, [1.0, 0.0, 0.0]).unwrap(), [1, 0, 0]);
        assert!(split_sizes(10, [0.5, 0.6, -0.1]).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let data: Vec<usize> = (0..101).collect();
        let s = split_dataset(&data, [0.6, 0.2, 0.2], 7).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, data);
        let again = split_dataset(&data, [0.6, 0.2, 0.2], 7).unwrap();
        assert_eq!(again.test, s.test);
        assert!(split_dataset::<usize>(&[], [1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn samples_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let samples = vec![
            DegradationSample {
                capacity_kwh: 900.0,
                temp_c: 25.0,
                dod: Some(0.5),
                p_chg_kw: Some(100.0),
                p_dis_kw: Some(120.0),
                mode: AgingMode::Cyclic,
                rate: 0.2,
                efc: Some(50.0),
                days: None,
            },
            DegradationSample {
                capacity_kwh: 880.0,
                temp_c: 40.0,
                dod: None,
                p_chg_kw: None,
                p_dis_kw: None,
                mode: AgingMode::Calendar,
                rate: 0.04,
                efc: None,
                days: Some(30.0),
            },
        ];
        write_samples_csv(&path, &samples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("capacity_kwh,temp_c,dod,p_chg_kw,p_dis_kw,mode,rate,efc,days\n"));
        assert!(text.contains(",calendar,"));
        assert_eq!(read_samples_csv(&path).unwrap(), samples);
    }
}
