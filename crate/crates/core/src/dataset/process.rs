//! Turning raw per-cell cycling and check-up records into labelled samples.
//!
//! Current is taken as piecewise constant: each record's current and voltage
//! hold until the next record. `t_s` counts seconds from the cell's start,
//! the same origin as the check-up `day_offset`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use super::{calendar_rate, compute_capacity, compute_dod, cyclic_rate, AgingMode, DegradationSample};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct CycleRow {
    t_s: f64,
    current_a: f64,
    voltage_v: f64,
    temp_c: f64,
}

#[derive(Debug, Deserialize)]
struct CuRow {
    cu_index: u32,
    e_charge_kwh: f64,
    e_discharge_kwh: f64,
    day_offset: f64,
}

/// Capacity loss over one interval, for the check-up offset fit.
#[derive(Clone, Debug, PartialEq)]
pub struct CuInterval {
    /// Intervals sharing a group are assumed to age at a common rate.
    pub group: String,
    pub loss: f64,
    /// Days (calendar) or equivalent full cycles (cyclic).
    pub exposure: f64,
    pub n_cu: f64,
}

/// Least-squares fit of `loss = rate_group * exposure + delta * n_cu` with a
/// free rate per group; returns `delta`. The per-group rates are projected
/// out first, leaving a one-dimensional regression on the residuals.
pub fn fit_cu_offset(intervals: &[CuInterval]) -> Option<f64> {
    let mut groups: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
    for iv in intervals {
        let g = groups.entry(&iv.group).or_default();
        g.0 += iv.exposure * iv.exposure;
        g.1 += iv.exposure * iv.loss;
        g.2 += iv.exposure * iv.n_cu;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for iv in intervals {
        let (xx, xl, xn) = groups[iv.group.as_str()];
        let (bl, bn) = if xx > 0.0 { (xl / xx, xn / xx) } else { (0.0, 0.0) };
        let l = iv.loss - bl * iv.exposure;
        let n = iv.n_cu - bn * iv.exposure;
        num += l * n;
        den += n * n;
    }
    let scale: f64 = intervals.iter().map(|iv| iv.n_cu * iv.n_cu).sum();
    (den > 1e-12 * scale.max(1.0)).then(|| num / den)
}

struct Interval {
    cell: String,
    c_start: f64,
    c_end: f64,
    days: f64,
    temp_c: f64,
    stress: Option<CycleStress>,
}

struct CycleStress {
    dod: f64,
    n_cycles: f64,
    p_chg_max: f64,
    p_dis_max: f64,
}

impl Interval {
    fn mode(&self) -> AgingMode {
        if self.stress.is_some() {
            AgingMode::Cyclic
        } else {
            AgingMode::Calendar
        }
    }

    fn exposure(&self) -> f64 {
        match &self.stress {
            Some(s) => s.dod * s.n_cycles,
            None => self.days,
        }
    }

    fn group(&self) -> String {
        let r = |v: f64| format!("{v:.3e}");
        match &self.stress {
            None => format!("cal/{}", r(self.temp_c)),
            Some(s) => format!(
                "cyc/{}/{}/{}/{}",
                r(self.temp_c),
                r(s.dod),
                r(s.p_chg_max),
                r(s.p_dis_max)
            ),
        }
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 2))))
        .collect()
}

fn process_cell(dir: &Path, id: &str) -> Result<Vec<Interval>> {
    let cu_path = dir.join(format!("{id}_cu.csv"));
    let cyc_path = dir.join(format!("{id}_cycles.csv"));
    let cus: Vec<CuRow> = read_rows(&cu_path)?;
    let recs: Vec<CycleRow> = read_rows(&cyc_path)?;
    let data_err = |path: &PathBuf, msg: String| Error::Data(format!("{}: {msg}", path.display()));
    if cus.len() < 2 {
        return Err(data_err(&cu_path, "need at least two check-ups".into()));
    }
    for w in cus.windows(2) {
        if w[1].cu_index <= w[0].cu_index || w[1].day_offset < w[0].day_offset {
            return Err(data_err(&cu_path, format!("check-up {} out of order", w[1].cu_index)));
        }
    }
    for (i, w) in recs.windows(2).enumerate() {
        if w[1].t_s <= w[0].t_s {
            return Err(data_err(&cyc_path, format!("timestamps not increasing at line {}", i + 3)));
        }
    }
    if let Some(i) = recs.iter().position(|r| !(r.voltage_v > 0.0)) {
        return Err(data_err(&cyc_path, format!("non-positive voltage at line {}", i + 2)));
    }
    let caps: Vec<f64> = cus
        .iter()
        .map(|c| compute_capacity(c.e_charge_kwh, c.e_discharge_kwh))
        .collect::<Result<_>>()
        .map_err(|e| data_err(&cu_path, e.to_string()))?;
    let c0 = caps[0];

    let mut out = Vec::with_capacity(cus.len() - 1);
    for i in 0..cus.len() - 1 {
        let (t0, t1) = (cus[i].day_offset * 86_400.0, cus[i + 1].day_offset * 86_400.0);
        let days = cus[i + 1].day_offset - cus[i].day_offset;
        let mut e_chg = 0.0;
        let mut e_dis = 0.0;
        let mut p_chg_max: f64 = 0.0;
        let mut p_dis_max: f64 = 0.0;
        let mut temp_time = 0.0;
        let mut temp_sum = 0.0;
        let mut n_cycles = 0u32;
        let mut charged_since_discharge = true;
        let mut in_discharge = false;
        for w in recs.windows(2) {
            let (r, next) = (&w[0], &w[1]);
            if r.t_s >= t1 {
                break;
            }
            let (start, end) = (r.t_s.max(t0), next.t_s.min(t1));
            if end <= start {
                continue;
            }
            let dt_h = (end - start) / 3600.0;
            let p_kw = r.current_a * r.voltage_v / 1000.0;
            temp_time += dt_h;
            temp_sum += r.temp_c * dt_h;
            if p_kw > 0.0 {
                e_chg += p_kw * dt_h;
                p_chg_max = p_chg_max.max(p_kw);
                charged_since_discharge = true;
                in_discharge = false;
            } else if p_kw < 0.0 {
                e_dis += -p_kw * dt_h;
                p_dis_max = p_dis_max.max(-p_kw);
                if !in_discharge && charged_since_discharge {
                    n_cycles += 1;
                    charged_since_discharge = false;
                }
                in_discharge = true;
            }
        }
        if temp_time <= 0.0 {
            return Err(data_err(&cyc_path, format!("no records between check-ups {} and {}", i, i + 1)));
        }
        let stress = if e_chg > 0.0 && e_dis > 0.0 && n_cycles > 0 {
            let n = f64::from(n_cycles);
            Some(CycleStress { dod: compute_dod(e_chg / n, e_dis / n, c0)?, n_cycles: n, p_chg_max, p_dis_max })
        } else {
            None
        };
        out.push(Interval {
            cell: id.to_string(),
            c_start: caps[i],
            c_end: caps[i + 1],
            days,
            temp_c: temp_sum / temp_time,
            stress,
        });
    }
    Ok(out)
}

/// Result of processing a directory of cell files.
pub struct Processed {
    pub samples: Vec<DegradationSample>,
    /// Fitted per-check-up capacity loss (kWh); zero when not identifiable.
    pub delta_cu: f64,
    pub cells: Vec<String>,
}

/// Processes every `<id>_cycles.csv` / `<id>_cu.csv` pair in `dir`, fits the
/// check-up offset over all intervals and labels each interval. One check-up
/// (the one closing the interval) is charged to each interval.
pub fn process_cells(dir: &Path) -> Result<Processed> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("_cycles.csv") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data(format!("{}: no <id>_cycles.csv files", dir.display())));
    }
    let per_cell: Vec<Vec<Interval>> = ids.par_iter().map(|id| process_cell(dir, id)).collect::<Result<_>>()?;
    let intervals: Vec<Interval> = per_cell.into_iter().flatten().collect();
    let fit_rows: Vec<CuInterval> = intervals
        .iter()
        .map(|iv| CuInterval { group: iv.group(), loss: iv.c_start - iv.c_end, exposure: iv.exposure(), n_cu: 1.0 })
        .collect();
    let delta_cu = fit_cu_offset(&fit_rows).unwrap_or_else(|| {
        log::warn!("check-up offset not identifiable (no group with differing interval lengths); using 0");
        0.0
    });
    let mut samples = Vec::with_capacity(intervals.len());
    for iv in &intervals {
        let sample = match &iv.stress {
            None => DegradationSample {
                capacity_kwh: iv.c_start,
                temp_c: iv.temp_c,
                dod: None,
                p_chg_kw: None,
                p_dis_kw: None,
                mode: AgingMode::Calendar,
                rate: calendar_rate(iv.c_start, iv.c_end, iv.days, 1.0, delta_cu)?,
                efc: None,
                days: Some(iv.days),
            },
            Some(s) => DegradationSample {
                capacity_kwh: iv.c_start,
                temp_c: iv.temp_c,
                dod: Some(s.dod),
                p_chg_kw: Some(s.p_chg_max),
                p_dis_kw: Some(s.p_dis_max),
                mode: AgingMode::Cyclic,
                rate: cyclic_rate(iv.c_start, iv.c_end + delta_cu, s.dod, s.n_cycles)?,
                efc: Some(s.dod * s.n_cycles),
                days: None,
            },
        };
        debug_assert_eq!(sample.mode, iv.mode());
        log::debug!("{}: {} interval, rate {}", iv.cell, sample.mode, sample.rate);
        samples.push(sample);
    }
    Ok(Processed { samples, delta_cu, cells: ids })
}
