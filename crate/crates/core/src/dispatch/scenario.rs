//! Day scenarios: file IO and the built-in seasonal typical days.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatteryState, Tariff};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Nominal PV, load and prices for one dispatched day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DayScenario<F: Scalar> {
    pub tau: F,
    pub pv: Vec<F>,
    pub load: Vec<F>,
    pub tariff: Tariff<F>,
}

impl<F: Scalar> DayScenario<F> {
    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DayRow {
    t: usize,
    pv_kw: f64,
    load_kw: f64,
    buy_price: f64,
    sell_price: f64,
}

/// Reads `t,pv_kw,load_kw,buy_price,sell_price`. Rows must be numbered `0..T`.
pub fn read_day_csv(path: &Path, tau: f64) -> Result<DayScenario<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    let mut day = DayScenario { tau, pv: vec![], load: vec![], tariff: Tariff { buy: vec![], sell: vec![] } };
    for (line, row) in reader.deserialize::<DayRow>().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), line + 2)))?;
        if row.t != line {
            return Err(Error::Data(format!(
                "{}: row {} has t={} but expected {}",
                path.display(),
                line + 2,
                row.t,
                line
            )));
        }
        day.pv.push(row.pv_kw);
        day.load.push(row.load_kw);
        day.tariff.buy.push(row.buy_price);
        day.tariff.sell.push(row.sell_price);
    }
    if day.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    day.tariff.validate()?;
    Ok(day)
}

pub fn write_day_csv(path: &Path, day: &DayScenario<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in 0..day.len() {
        w.serialize(DayRow {
            t,
            pv_kw: day.pv[t],
            load_kw: day.load[t],
            buy_price: day.tariff.buy[t],
            sell_price: day.tariff.sell[t],
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// The `battery.json` interchange format.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub c0_kwh: f64,
    pub c_now_kwh: f64,
    pub p_chg_cap_kw: f64,
    pub p_dis_cap_kw: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub grid_cap_kw: f64,
}

impl BatterySpec {
    pub fn battery(&self) -> Result<BatteryState<f64>> {
        if !(self.c_now_kwh > 0.0 && self.c_now_kwh <= self.c0_kwh) {
            return Err(Error::Config(format!(
                "c_now_kwh {} must lie in (0, c0_kwh={}]",
                self.c_now_kwh, self.c0_kwh
            )));
        }
        BatteryState::new(self.c0_kwh, self.c_now_kwh, self.p_chg_cap_kw, self.p_dis_cap_kw, self.eta_c, self.eta_d)
    }
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            c0_kwh: 910.8,
            c_now_kwh: 910.8,
            p_chg_cap_kw: 500.0,
            p_dis_cap_kw: 500.0,
            eta_c: 0.95,
            eta_d: 0.95,
            grid_cap_kw: 1500.0,
        }
    }
}

/// Parameters of the built-in hourly typical days, one per season.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DayProfile {
    pub base_load_kw: f64,
    pub daytime_load_kw: f64,
    pub evening_load_kw: f64,
    pub load_scale_per_season: [f64; 4],
    pub pv_peak_kw: f64,
    pub pv_scale_per_season: [f64; 4],
    pub offpeak_price: f64,
    pub midpeak_price: f64,
    pub peak_price: f64,
    pub sell_price: f64,
}

impl Default for DayProfile {
    fn default() -> Self {
        Self {
            base_load_kw: 350.0,
            daytime_load_kw: 100.0,
            evening_load_kw: 250.0,
            load_scale_per_season: [1.0, 1.15, 0.95, 1.1],
            pv_peak_kw: 700.0,
            pv_scale_per_season: [0.9, 1.0, 0.75, 0.5],
            offpeak_price: 0.12,
            midpeak_price: 0.25,
            peak_price: 0.50,
            sell_price: 0.08,
        }
    }
}

impl DayProfile {
    /// Hourly typical day for `season` (0..4).
    pub fn day(&self, season: usize) -> DayScenario<f64> {
        let ls = self.load_scale_per_season[season % 4];
        let ps = self.pv_scale_per_season[season % 4];
        let mut day = DayScenario { tau: 1.0, pv: vec![], load: vec![], tariff: Tariff { buy: vec![], sell: vec![] } };
        for h in 0..24 {
            let mut load = self.base_load_kw;
            if (8..17).contains(&h) {
                load += self.daytime_load_kw;
            }
            if (17..22).contains(&h) {
                load += self.evening_load_kw;
            }
            day.load.push(load * ls);
            let x = (h as f64 + 0.5 - 12.5) / 2.5;
            let pv = if (6..19).contains(&h) { self.pv_peak_kw * ps * (-0.5 * x * x).exp() } else { 0.0 };
            day.pv.push(pv);
            let price = match h {
                17..=21 => self.peak_price,
                7..=16 => self.midpeak_price,
                _ => self.offpeak_price,
            };
            day.tariff.buy.push(price);
            day.tariff.sell.push(self.sell_price);
        }
        day
    }

    pub fn seasons(&self) -> [DayScenario<f64>; 4] {
        std::array::from_fn(|s| self.day(s))
    }

    pub fn validate(&self) -> Result<()> {
        let values = [
            self.base_load_kw,
            self.daytime_load_kw,
            self.evening_load_kw,
            self.pv_peak_kw,
            self.offpeak_price,
            self.midpeak_price,
            self.peak_price,
            self.sell_price,
        ];
        if values.iter().chain(&self.load_scale_per_season).chain(&self.pv_scale_per_season).any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("day profile values must be nonnegative".into()));
        }
        if self.sell_price > self.offpeak_price.min(self.midpeak_price).min(self.peak_price) {
            return Err(Error::Config("sell price exceeds a buy price in the day profile".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_days_are_valid() {
        let p = DayProfile::default();
        p.validate().unwrap();
        for d in p.seasons() {
            assert_eq!(d.len(), 24);
            d.tariff.validate().unwrap();
            assert!(d.pv.iter().all(|&v| v >= 0.0));
        }
        let summer = p.day(1);
        assert!(summer.pv[12] > 600.0 && summer.pv[0] == 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("day.csv");
        let day = DayProfile::default().day(2);
        write_day_csv(&path, &day).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,pv_kw,load_kw,buy_price,sell_price\n"));
        let back = read_day_csv(&path, 1.0).unwrap();
        assert_eq!(back, day);
    }

    #[test]
    fn csv_rejects_sell_above_buy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("day.csv");
        std::fs::write(&path, "t,pv_kw,load_kw,buy_price,sell_price\n0,0,1,0.2,0.1\n1,0,1,0.1,0.2\n").unwrap();
        let err = read_day_csv(&path, 1.0).unwrap_err();
        assert!(err.to_string().contains("step 1"), "{err}");
    }

    #[test]
    fn battery_spec_parses() {
        let json = r#"{"c0_kwh":100,"c_now_kwh":80,"p_chg_cap_kw":50,"p_dis_cap_kw":50,"eta_c":0.95,"eta_d":0.95,"grid_cap_kw":300}"#;
        let spec: BatterySpec = serde_json::from_str(json).unwrap();
        let b = spec.battery().unwrap();
        assert_eq!((b.e_lower(), b.e_upper(), b.e0), (10.0, 90.0, 50.0));
    }
}
