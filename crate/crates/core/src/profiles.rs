//! Exogenous load and PV scenarios.
//!
//! Profiles are kept in physical units (MW / MVar) per device, in the order
//! the feeder lists its loads and PV units. A [`ProfileSet`] is a list of
//! days, each a sequence of operating points: 24 hourly points for ordinary
//! days, or one point per second for the fast-fluctuation trace.
//!
//! CSV layout (header required):
//!
//! ```text
//! day,hour,load0_p_mw,load0_q_mvar,…,loadK_p_mw,loadK_q_mvar,pv0_p_mw,…,pvG_p_mw
//! ```
//!
//! The second column may be named `second` instead of `hour` for
//! second-resolution traces.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Feeder;

pub const HOURS_PER_DAY: usize = 24;

/// One operating point in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub load_p_mw: Vec<f64>,
    pub load_q_mvar: Vec<f64>,
    pub pv_p_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    pub day: usize,
    pub steps: Vec<OperatingPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Hour,
    Second,
}

impl Resolution {
    fn column(self) -> &'static str {
        match self {
            Resolution::Hour => "hour",
            Resolution::Second => "second",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub resolution: Resolution,
    pub n_loads: usize,
    pub n_pvs: usize,
    pub days: Vec<DayProfile>,
}

impl ProfileSet {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Checks that device counts match `feeder`.
    pub fn check_feeder(&self, feeder: &Feeder) -> Result<()> {
        if self.n_loads != feeder.loads.len() {
            return Err(Error::Dimension {
                context: "profile load columns",
                expected: feeder.loads.len(),
                got: self.n_loads,
            });
        }
        if self.n_pvs != feeder.pvs.len() {
            return Err(Error::Dimension {
                context: "profile PV columns",
                expected: feeder.pvs.len(),
                got: self.n_pvs,
            });
        }
        Ok(())
    }

    /// Subset by day position.
    pub fn select(&self, positions: &[usize]) -> ProfileSet {
        ProfileSet {
            days: positions.iter().map(|&i| self.days[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> ProfileSet {
        ProfileSet {
            resolution: self.resolution,
            n_loads: self.n_loads,
            n_pvs: self.n_pvs,
            days: Vec::new(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let mut header = vec!["day".to_string(), self.resolution.column().to_string()];
        for k in 0..self.n_loads {
            header.push(format!("load{k}_p_mw"));
            header.push(format!("load{k}_q_mvar"));
        }
        for g in 0..self.n_pvs {
            header.push(format!("pv{g}_p_mw"));
        }
        let csv_err = |e: csv::Error| Error::parse(path.display().to_string(), e);
        w.write_record(&header).map_err(csv_err)?;
        for d in &self.days {
            for (t, pt) in d.steps.iter().enumerate() {
                let mut row = vec![d.day.to_string(), t.to_string()];
                for k in 0..self.n_loads {
                    row.push(pt.load_p_mw[k].to_string());
                    row.push(pt.load_q_mvar[k].to_string());
                }
                row.extend(pt.pv_p_mw.iter().map(f64::to_string));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<ProfileSet> {
        let path = path.as_ref();
        let what = path.display().to_string();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&what, e))?;
        let header = r.headers().map_err(|e| Error::parse(&what, e))?.clone();
        if header.len() < 2 || &header[0] != "day" {
            return Err(Error::parse(&what, "first column must be 'day'"));
        }
        let resolution = match &header[1] {
            "hour" => Resolution::Hour,
            "second" => Resolution::Second,
            other => return Err(Error::parse(&what, format!("second column must be hour or second, got '{other}'"))),
        };
        let mut load_cols = Vec::new();
        let mut pv_cols = Vec::new();
        for (i, name) in header.iter().enumerate().skip(2) {
            if let Some(rest) = name.strip_prefix("load") {
                if rest.ends_with("_p_mw") || rest.ends_with("_q_mvar") {
                    load_cols.push(i);
                    continue;
                }
            }
            if name.starts_with("pv") && name.ends_with("_p_mw") {
                pv_cols.push(i);
                continue;
            }
            return Err(Error::parse(&what, format!("unexpected column '{name}'")));
        }
        if load_cols.len() % 2 != 0 {
            return Err(Error::parse(&what, "load columns must come in p/q pairs"));
        }
        for (k, pair) in load_cols.chunks(2).enumerate() {
            if header[pair[0]] != *format!("load{k}_p_mw") || header[pair[1]] != *format!("load{k}_q_mvar") {
                return Err(Error::parse(&what, format!("load columns out of order at load{k}")));
            }
        }
        let n_loads = load_cols.len() / 2;
        let n_pvs = pv_cols.len();

        let mut days: Vec<DayProfile> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(&what, e))?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(&what, format!("row {}: column {}: {e}", line + 2, &header[i])))
            };
            let day: usize = rec[0]
                .trim()
                .parse()
                .map_err(|e| Error::parse(&what, format!("row {}: day: {e}", line + 2)))?;
            let step: usize = rec[1]
                .trim()
                .parse()
                .map_err(|e| Error::parse(&what, format!("row {}: step: {e}", line + 2)))?;
            let mut pt = OperatingPoint {
                load_p_mw: Vec::with_capacity(n_loads),
                load_q_mvar: Vec::with_capacity(n_loads),
                pv_p_mw: Vec::with_capacity(n_pvs),
            };
            for pair in load_cols.chunks(2) {
                pt.load_p_mw.push(num(pair[0])?);
                pt.load_q_mvar.push(num(pair[1])?);
            }
            for &c in &pv_cols {
                pt.pv_p_mw.push(num(c)?);
            }
            match days.last_mut() {
                Some(d) if d.day == day => {
                    if step != d.steps.len() {
                        return Err(Error::parse(&what, format!("row {}: step {step} out of sequence", line + 2)));
                    }
                    d.steps.push(pt);
                }
                _ => {
                    if step != 0 {
                        return Err(Error::parse(&what, format!("row {}: day {day} does not start at step 0", line + 2)));
                    }
                    days.push(DayProfile { day, steps: vec![pt] });
                }
            }
        }
        if resolution == Resolution::Hour {
            if let Some(d) = days.iter().find(|d| d.steps.len() != HOURS_PER_DAY) {
                return Err(Error::parse(&what, format!("day {} has {} hourly rows, expected 24", d.day, d.steps.len())));
            }
        }
        Ok(ProfileSet {
            resolution,
            n_loads,
            n_pvs,
            days,
        })
    }
}

/// Normalized residential load shape, peak 1.0 at 18:00.
pub const LOAD_SHAPE: [f64; HOURS_PER_DAY] = [
    0.55, 0.50, 0.47, 0.45, 0.46, 0.50, 0.60, 0.72, 0.78, 0.75, 0.72, 0.70, 0.68, 0.67, 0.68, 0.72, 0.80,
    0.92, 1.00, 0.98, 0.90, 0.80, 0.70, 0.60,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub days: usize,
    /// Constant load power factor (lagging) used to synthesize reactive load.
    pub power_factor: f64,
    /// Std of the per-load, per-hour multiplicative load noise.
    pub load_noise: f64,
    /// Std of the day-level load scaling.
    pub day_load_noise: f64,
    /// Probability of a clear / partly cloudy day; the rest are overcast.
    pub p_clear: f64,
    pub p_partly: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            days: 365,
            power_factor: 0.95,
            load_noise: 0.05,
            day_load_noise: 0.05,
            p_clear: 0.55,
            p_partly: 0.30,
        }
    }
}

/// Generates a year of hourly profiles for `feeder`: a diurnal load shape
/// with seasonal and random scaling, and bell-shaped PV output with
/// day-level clearness and hourly cloud noise.
pub fn synthetic_year(feeder: &Feeder, cfg: &SyntheticConfig, seed: u64) -> ProfileSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let tan_phi = cfg.power_factor.acos().tan();
    let mut days = Vec::with_capacity(cfg.days);
    for day in 0..cfg.days {
        let season = (2.0 * PI * day as f64 / 365.0).cos(); // +1 mid-winter, −1 mid-summer
        let load_scale = (0.92 + 0.08 * season + cfg.day_load_noise * unit.sample(&mut rng)).max(0.5);
        let sunrise = 6.0 + 1.0 * season;
        let sunset = 19.0 - 1.0 * season;
        let u: f64 = rng.random();
        let (clearness, cloud_std) = if u < cfg.p_clear {
            (rng.random_range(0.9..1.0), 0.02)
        } else if u < cfg.p_clear + cfg.p_partly {
            (rng.random_range(0.55..0.9), 0.15)
        } else {
            (rng.random_range(0.15..0.45), 0.10)
        };
        let peak_scale = 0.95 - 0.05 * season;

        let mut steps = Vec::with_capacity(HOURS_PER_DAY);
        for (hour, &shape) in LOAD_SHAPE.iter().enumerate() {
            let mut pt = OperatingPoint {
                load_p_mw: Vec::with_capacity(feeder.loads.len()),
                load_q_mvar: Vec::with_capacity(feeder.loads.len()),
                pv_p_mw: Vec::with_capacity(feeder.pvs.len()),
            };
            for load in &feeder.loads {
                let mult = (1.0 + cfg.load_noise * unit.sample(&mut rng)).max(0.1);
                let p = feeder.pu_to_mw(load.p_nom) * shape * load_scale * mult;
                pt.load_p_mw.push(p);
                pt.load_q_mvar.push(p * tan_phi);
            }
            let t = hour as f64 + 0.5;
            let bell = if t > sunrise && t < sunset {
                (PI * (t - sunrise) / (sunset - sunrise)).sin().powf(1.5)
            } else {
                0.0
            };
            for pv in &feeder.pvs {
                let noise = (1.0 + cloud_std * unit.sample(&mut rng)).max(0.0);
                let p = feeder.pu_to_mw(pv.p_rated) * peak_scale * clearness * bell * noise;
                pt.pv_p_mw.push(p.clamp(0.0, feeder.pu_to_mw(pv.p_rated)));
            }
            steps.push(pt);
        }
        days.push(DayProfile { day, steps });
    }
    ProfileSet {
        resolution: Resolution::Hour,
        n_loads: feeder.loads.len(),
        n_pvs: feeder.pvs.len(),
        days,
    }
}

/// Splits day positions into (train, test) with `n_test` test days drawn
/// uniformly under `seed`. Both lists come back sorted.
pub fn split_days(n_days: usize, n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_test >= n_days {
        return Err(Error::Config(format!("cannot hold out {n_test} of {n_days} days")));
    }
    let mut order: Vec<usize> = (0..n_days).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// 60-second cloud transient: every PV falls linearly from its rated output
/// to half of it over 30 s, then climbs back over the next 30 s. Loads are
/// held at `base`.
pub fn fast_fluctuation(feeder: &Feeder, base: &OperatingPoint) -> ProfileSet {
    let steps = (0..60)
        .map(|sec| {
            let frac = if sec <= 30 {
                1.0 - 0.5 * sec as f64 / 30.0
            } else {
                0.5 + 0.5 * (sec - 30) as f64 / 30.0
            };
            OperatingPoint {
                load_p_mw: base.load_p_mw.clone(),
                load_q_mvar: base.load_q_mvar.clone(),
                pv_p_mw: feeder.pvs.iter().map(|pv| feeder.pu_to_mw(pv.p_rated) * frac).collect(),
            }
        })
        .collect();
    ProfileSet {
        resolution: Resolution::Second,
        n_loads: feeder.loads.len(),
        n_pvs: feeder.pvs.len(),
        days: vec![DayProfile { day: 0, steps }],
    }
}

/// Midday operating point used as the load backdrop of the fast-fluctuation
/// trace: nominal loads scaled by the 13:00 shape value.
pub fn midday_base(feeder: &Feeder, power_factor: f64) -> OperatingPoint {
    let tan_phi = power_factor.acos().tan();
    let load_p_mw: Vec<f64> = feeder
        .loads
        .iter()
        .map(|l| feeder.pu_to_mw(l.p_nom) * LOAD_SHAPE[13])
        .collect();
    OperatingPoint {
        load_q_mvar: load_p_mw.iter().map(|p| p * tan_phi).collect(),
        load_p_mw,
        pv_p_mw: vec![0.0; feeder.pvs.len()],
    }
}
