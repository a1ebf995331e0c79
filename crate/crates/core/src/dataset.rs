//! Forecast cases, CSV interchange, chronological splits, predictor
//! standardization and the synthetic scenario generator.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::TruncatedLogistic;
use crate::error::{Error, Result};

pub const N_MEMBERS: usize = 20;
pub const N_SUBENSEMBLES: usize = 4;
pub const SUBENSEMBLE_SIZE: usize = 5;
pub const MAX_LEAD_TIME: u32 = 21;

const FIXED_COLUMNS: usize = 4 + N_MEMBERS;
const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastCase {
    pub station_id: u32,
    pub date: NaiveDate,
    pub lead_time_h: u32,
    /// Gust members in m/s; member `i` belongs to sub-ensemble `i / 5`.
    pub ensemble: Vec<f64>,
    /// Values aligned with the owning dataset's predictor names.
    pub predictors: Vec<f64>,
    pub observation: Option<f64>,
}

impl ForecastCase {
    pub fn validate(&self, line: u64) -> Result<()> {
        if self.ensemble.len() != N_MEMBERS {
            return Err(Error::Validation {
                line,
                column: "ens".into(),
                msg: format!("expected {N_MEMBERS} members, found {}", self.ensemble.len()),
            });
        }
        for (i, &x) in self.ensemble.iter().enumerate() {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Validation {
                    line,
                    column: format!("ens_{}", i + 1),
                    msg: format!("ensemble value {x} is not a finite positive number"),
                });
            }
        }
        if self.lead_time_h > MAX_LEAD_TIME {
            return Err(Error::Validation {
                line,
                column: "lead_time".into(),
                msg: format!("lead time {} outside 0..={MAX_LEAD_TIME}", self.lead_time_h),
            });
        }
        if let Some(y) = self.observation {
            if !(y.is_finite() && y > 0.0) {
                return Err(Error::Validation { line, column: "obs".into(), msg: format!("observation {y} is not positive") });
            }
        }
        Ok(())
    }

    pub fn month(&self) -> u32 {
        self.date.month()
    }

    pub fn year(&self) -> i32 {
        self.date.year()
    }

    /// Runs start at 00 UTC, so the valid hour is the lead time modulo 24.
    pub fn hour_of_day(&self) -> u32 {
        self.lead_time_h % 24
    }

    pub fn ensemble_mean(&self) -> f64 {
        self.ensemble.iter().sum::<f64>() / self.ensemble.len() as f64
    }

    /// Sample standard deviation (divisor n - 1).
    pub fn ensemble_sd(&self) -> f64 {
        sample_sd(&self.ensemble)
    }

    pub fn subensemble(&self, k: usize) -> &[f64] {
        &self.ensemble[k * SUBENSEMBLE_SIZE..(k + 1) * SUBENSEMBLE_SIZE]
    }

    pub fn require_observation(&self) -> Result<f64> {
        self.observation.ok_or_else(|| {
            Error::MissingKey(format!("observation for station {} on {} lead {}", self.station_id, self.date, self.lead_time_h))
        })
    }
}

pub fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n as f64;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// A set of cases sharing one predictor schema.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub predictor_names: Vec<String>,
    pub cases: Vec<ForecastCase>,
}

impl Dataset {
    pub fn new(predictor_names: Vec<String>, cases: Vec<ForecastCase>) -> Result<Self> {
        for (i, c) in cases.iter().enumerate() {
            let line = i as u64 + 2;
            c.validate(line)?;
            if c.predictors.len() != predictor_names.len() {
                return Err(Error::Validation {
                    line,
                    column: "predictors".into(),
                    msg: format!("expected {} predictor values, found {}", predictor_names.len(), c.predictors.len()),
                });
            }
        }
        Ok(Self { predictor_names, cases })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn predictor_index(&self, name: &str) -> Result<usize> {
        self.predictor_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingKey(format!("predictor `{name}`")))
    }

    pub fn stations(&self) -> Vec<u32> {
        self.cases.iter().map(|c| c.station_id).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn lead_times(&self) -> Vec<u32> {
        self.cases.iter().map(|c| c.lead_time_h).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn years(&self) -> Vec<i32> {
        self.cases.iter().map(|c| c.year()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn filter<F: Fn(&ForecastCase) -> bool>(&self, keep: F) -> Dataset {
        Dataset {
            predictor_names: self.predictor_names.clone(),
            cases: self.cases.iter().filter(|c| keep(c)).cloned().collect(),
        }
    }

    /// Concatenation; both sides must share the schema.
    pub fn union(&self, other: &Dataset) -> Result<Dataset> {
        if self.predictor_names != other.predictor_names {
            return Err(Error::Config("cannot merge datasets with different predictor columns".into()));
        }
        let mut cases = self.cases.clone();
        cases.extend(other.cases.iter().cloned());
        Ok(Dataset { predictor_names: self.predictor_names.clone(), cases })
    }

    pub fn load_csv(path: &Path) -> Result<Dataset> {
        let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected = csv_header(&[]);
        if header.len() < FIXED_COLUMNS || header.iter().take(FIXED_COLUMNS).ne(expected.iter().map(String::as_str)) {
            return Err(Error::Parse { line: 1, msg: format!("header must start with `{}`", expected.join(",")) });
        }
        let predictor_names: Vec<String> = header.iter().skip(FIXED_COLUMNS).map(str::to_owned).collect();
        let mut cases = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(Error::Parse { line, msg: format!("expected {} fields, found {}", header.len(), record.len()) });
            }
            let parse_f = |i: usize| -> Result<f64> {
                record[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse { line, msg: format!("column `{}`: {e}", &header[i]) })
            };
            let station_id = record[0]
                .trim()
                .parse::<u32>()
                .map_err(|e| Error::Parse { line, msg: format!("column `station_id`: {e}") })?;
            let date = NaiveDate::parse_from_str(record[1].trim(), DATE_FORMAT)
                .map_err(|e| Error::Parse { line, msg: format!("column `date`: {e}") })?;
            let lead_time_h = record[2]
                .trim()
                .parse::<u32>()
                .map_err(|e| Error::Parse { line, msg: format!("column `lead_time`: {e}") })?;
            let observation = if record[3].trim().is_empty() || record[3].trim() == "NA" { None } else { Some(parse_f(3)?) };
            let ensemble = (4..FIXED_COLUMNS).map(parse_f).collect::<Result<Vec<_>>>()?;
            let predictors = (FIXED_COLUMNS..record.len()).map(parse_f).collect::<Result<Vec<_>>>()?;
            let case = ForecastCase { station_id, date, lead_time_h, ensemble, predictors, observation };
            case.validate(line)?;
            cases.push(case);
        }
        Ok(Dataset { predictor_names, cases })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        self.to_writer(file)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(csv_header(&self.predictor_names))?;
        let mut row = Vec::with_capacity(FIXED_COLUMNS + self.predictor_names.len());
        for c in &self.cases {
            row.clear();
            row.push(c.station_id.to_string());
            row.push(c.date.format(DATE_FORMAT).to_string());
            row.push(c.lead_time_h.to_string());
            row.push(c.observation.map(|y| y.to_string()).unwrap_or_default());
            row.extend(c.ensemble.iter().map(f64::to_string));
            row.extend(c.predictors.iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }

    pub fn split_chronological(&self, years: &SplitYears) -> Result<DataSplit> {
        years.validate()?;
        let pick = |ys: &[i32]| self.filter(|c| ys.contains(&c.year()));
        Ok(DataSplit { train: pick(&years.train), validation: pick(&years.validation), test: pick(&years.test) })
    }
}

fn csv_header(predictors: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["station_id", "date", "lead_time", "obs"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=N_MEMBERS).map(|i| format!("ens_{i}")));
    h.extend(predictors.iter().cloned());
    h
}

/// Calendar years assigned to each part of a chronological split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitYears {
    pub train: Vec<i32>,
    #[serde(default)]
    pub validation: Vec<i32>,
    pub test: Vec<i32>,
}

impl SplitYears {
    /// First `n - 2` years train, then one validation and one test year.
    pub fn standard(years: &[i32]) -> Result<Self> {
        if years.len() < 3 {
            return Err(Error::Config(format!("need at least 3 years for a train/validation/test split, found {}", years.len())));
        }
        let n = years.len();
        Ok(Self { train: years[..n - 2].to_vec(), validation: vec![years[n - 2]], test: vec![years[n - 1]] })
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [&self.train, &self.validation, &self.test];
        for (i, a) in parts.iter().enumerate() {
            for b in parts.iter().skip(i + 1) {
                if let Some(y) = a.iter().find(|y| b.contains(y)) {
                    return Err(Error::Config(format!("year {y} assigned to more than one split")));
                }
            }
        }
        let nonempty: Vec<_> = parts.iter().filter(|p| !p.is_empty()).collect();
        for w in nonempty.windows(2) {
            if w[0].iter().max() >= w[1].iter().min() {
                return Err(Error::Config("split years are not in chronological order".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DataSplit {
    /// Training period used for final refits.
    pub fn train_full(&self) -> Dataset {
        self.train.union(&self.validation).expect("split parts share a schema")
    }
}

/// Per-column centering and scaling with sample standard deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Retained column names and their positions in the input rows.
    pub names: Vec<String>,
    pub columns: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub dropped: Vec<String>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(names: &[String], rows: &[R]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Config(format!("standardizer needs at least 2 rows, got {}", rows.len())));
        }
        let mut out = Self { names: Vec::new(), columns: Vec::new(), means: Vec::new(), sds: Vec::new(), dropped: Vec::new() };
        let mut col = Vec::with_capacity(rows.len());
        for (j, name) in names.iter().enumerate() {
            col.clear();
            col.extend(rows.iter().map(|r| r.as_ref()[j]));
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = sample_sd(&col);
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                log::warn!("predictor `{name}` has zero variance in the training data and is dropped");
                out.dropped.push(name.clone());
                continue;
            }
            out.names.push(name.clone());
            out.columns.push(j);
            out.means.push(mean);
            out.sds.push(sd);
        }
        Ok(out)
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.columns.len());
        self.apply_into(row, &mut out);
        out
    }

    pub fn apply_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.columns.iter().zip(&self.means).zip(&self.sds).map(|((&j, m), s)| (row[j] - m) / s));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSpec {
    /// Location follows the gust signal; the ensemble is centered on the truth.
    Linear,
    /// Adds a radiation effect to the location that the ensemble does not see.
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationEffect {
    pub bias: f64,
    pub scale: f64,
    pub altitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_stations: usize,
    pub n_years: usize,
    pub start_year: i32,
    pub lead_times: Vec<u32>,
    /// Keep every k-th day of the year.
    pub day_stride: u32,
    /// Drawn from the seed when empty.
    pub station_effects: Vec<StationEffect>,
    pub truth: TruthSpec,
    /// Standard deviation of the synoptic wind signal in m/s.
    pub synoptic_sd: f64,
    pub subensemble_bias: [f64; N_SUBENSEMBLES],
    pub dispersion: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_stations: 10,
            n_years: 3,
            start_year: 2010,
            lead_times: vec![0, 3, 6, 12, 18],
            day_stride: 1,
            station_effects: Vec::new(),
            truth: TruthSpec::Linear,
            synoptic_sd: 2.0,
            subensemble_bias: [0.5, -0.3, 1.0, 0.2],
            dispersion: 0.5,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dispersion > 0.0 && self.dispersion <= 1.0) {
            return Err(Error::Config(format!("dispersion must lie in (0, 1], got {}", self.dispersion)));
        }
        if self.n_stations == 0 || self.n_years == 0 || self.lead_times.is_empty() || self.day_stride == 0 {
            return Err(Error::Config("scenario needs at least one station, year, lead time and a positive day stride".into()));
        }
        if !self.station_effects.is_empty() && self.station_effects.len() != self.n_stations {
            return Err(Error::Config(format!(
                "{} station effects given for {} stations",
                self.station_effects.len(),
                self.n_stations
            )));
        }
        if self.station_effects.iter().any(|e| !(e.scale > 0.0)) {
            return Err(Error::Config("station scale effects must be positive".into()));
        }
        if let Some(&l) = self.lead_times.iter().find(|&&l| l > MAX_LEAD_TIME) {
            return Err(Error::Config(format!("lead time {l} outside 0..={MAX_LEAD_TIME}")));
        }
        if !self.synoptic_sd.is_finite() || self.synoptic_sd < 0.0 {
            return Err(Error::Config("synoptic_sd must be non-negative".into()));
        }
        Ok(())
    }

    pub fn years(&self) -> Vec<i32> {
        (0..self.n_years as i32).map(|i| self.start_year + i).collect()
    }
}

pub const SCENARIO_PREDICTORS: [&str; 10] =
    ["vmax_mean", "vmax_sd", "u_mean", "u_sd", "t_mean", "t_sd", "rad_mean", "doy_cos", "altitude", "noise"];

/// The column carrying the signal the ensemble misses in the nonlinear scenario.
pub const PLANTED_PREDICTOR: &str = "rad_mean";
pub const NOISE_PREDICTOR: &str = "noise";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub station_id: u32,
    pub date: NaiveDate,
    pub lead_time: u32,
    pub mu_true: f64,
    pub sigma_true: f64,
}

impl TruthRecord {
    pub fn distribution(&self) -> TruncatedLogistic<f64> {
        TruncatedLogistic::new(self.mu_true, self.sigma_true).expect("generator produces positive scales")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub data: Dataset,
    /// Aligned with `data.cases`.
    pub truth: Vec<TruthRecord>,
}

impl Scenario {
    pub fn write_truth_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        for t in &self.truth {
            wtr.serialize(t)?;
        }
        wtr.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }

    pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRecord>> {
        let mut rdr = csv::Reader::from_path(path)?;
        Ok(rdr.deserialize().collect::<std::result::Result<Vec<TruthRecord>, _>>()?)
    }
}

/// Draws a synthetic record. Output depends only on `cfg`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let effects: Vec<StationEffect> = if cfg.station_effects.is_empty() {
        (0..cfg.n_stations)
            .map(|_| StationEffect {
                bias: 1.5 * std_normal.sample(&mut rng),
                scale: rng.gen_range(0.8..1.25),
                altitude: rng.gen_range(0.0..1500.0),
            })
            .collect()
    } else {
        cfg.station_effects.clone()
    };
    let phi: f64 = 0.8;
    let innovation = (1.0 - phi * phi).sqrt();
    let names: Vec<String> = SCENARIO_PREDICTORS.iter().map(|s| s.to_string()).collect();
    let mut cases = Vec::new();
    let mut truth = Vec::new();
    let mut members = vec![0.0; N_MEMBERS];
    for (s, eff) in effects.iter().enumerate() {
        let station_id = s as u32 + 1;
        let level = 8.0 + 0.002 * eff.altitude + eff.bias;
        let (mut w1, mut w2) = (std_normal.sample(&mut rng), std_normal.sample(&mut rng));
        for year in cfg.years() {
            let n_days = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year").ordinal();
            for doy in 1..=n_days {
                w1 = phi * w1 + innovation * std_normal.sample(&mut rng);
                w2 = phi * w2 + innovation * std_normal.sample(&mut rng);
                if (doy - 1) % cfg.day_stride != 0 {
                    continue;
                }
                let date = NaiveDate::from_yo_opt(year, doy).expect("valid ordinal");
                let doy_cos = (2.0 * std::f64::consts::PI * doy as f64 / n_days as f64).cos();
                for &lead in &cfg.lead_times {
                    let diurnal = (std::f64::consts::PI * lead as f64 / 21.0).sin();
                    let r = std_normal.sample(&mut rng);
                    let mu_base = level + 1.5 * doy_cos + diurnal + cfg.synoptic_sd * w1;
                    let (mu_true, sigma_true, mu_ens) = match cfg.truth {
                        TruthSpec::Linear => {
                            let sigma = 1.2 * eff.scale * (0.2 * w2).exp();
                            (mu_base, sigma, mu_base)
                        }
                        TruthSpec::Nonlinear => {
                            let mu = mu_base + 3.0 * r + 1.5 * (r * r - 1.0);
                            let sigma = 1.2 * eff.scale * (0.2 * w2 + 0.2 * r).exp();
                            (mu, sigma, mu_base)
                        }
                    };
                    let sigma_ens = cfg.dispersion * sigma_true;
                    for (i, m) in members.iter_mut().enumerate() {
                        let k = i / SUBENSEMBLE_SIZE;
                        *m = TruncatedLogistic::new(mu_ens + cfg.subensemble_bias[k], sigma_ens)
                            .expect("positive ensemble scale")
                            .sample(&mut rng)
                            .max(1e-3);
                    }
                    let observation = TruncatedLogistic::new(mu_true, sigma_true).expect("positive scale").sample(&mut rng);
                    let u: Vec<f64> = (0..N_MEMBERS).map(|_| 0.7 * cfg.synoptic_sd * w1 + std_normal.sample(&mut rng)).collect();
                    let t_base = 10.0 - 8.0 * doy_cos + 3.0 * diurnal - 0.006 * eff.altitude;
                    let t: Vec<f64> = (0..N_MEMBERS).map(|_| t_base + 1.5 * std_normal.sample(&mut rng)).collect();
                    let rad_mean = r + 0.15 * std_normal.sample(&mut rng);
                    let noise = std_normal.sample(&mut rng);
                    let vmax_mean = members.iter().sum::<f64>() / N_MEMBERS as f64;
                    let predictors = vec![
                        vmax_mean,
                        sample_sd(&members),
                        u.iter().sum::<f64>() / N_MEMBERS as f64,
                        sample_sd(&u),
                        t.iter().sum::<f64>() / N_MEMBERS as f64,
                        sample_sd(&t),
                        rad_mean,
                        doy_cos,
                        eff.altitude,
                        noise,
                    ];
                    cases.push(ForecastCase {
                        station_id,
                        date,
                        lead_time_h: lead,
                        ensemble: members.clone(),
                        predictors,
                        observation: Some(observation),
                    });
                    truth.push(TruthRecord { station_id, date, lead_time: lead, mu_true, sigma_true });
                }
            }
        }
    }
    Ok(Scenario { data: Dataset { predictor_names: names, cases }, truth })
}
