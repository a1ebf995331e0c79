//! Reference forecasts: the raw ensemble and an extended probabilistic
//! climatology (EPC).

use std::collections::BTreeMap;

use gustpp_core::distributions::{EnsembleForecast, ProbForecast};
use gustpp_core::{Dataset, Error, ForecastCase, Forecaster, ProbForecastF64, Result};
use serde::{Deserialize, Serialize};

use crate::local::seasonal_window;

pub struct RawEnsemble;

pub fn raw_ensemble_forecast(case: &ForecastCase) -> Result<EnsembleForecast<f64>> {
    EnsembleForecast::new(case.ensemble.clone())
}

impl Forecaster for RawEnsemble {
    fn method(&self) -> &'static str {
        "raw"
    }

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64> {
        raw_ensemble_forecast(case).map(ProbForecast::Ensemble)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpcPool {
    pub station: u32,
    pub hour: u32,
    pub month: u32,
    /// Sorted past observations.
    pub values: Vec<f64>,
}

/// Past observations per station, hour of day and month, each pool spanning
/// a three-month window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "EpcJson", into = "EpcJson")]
pub struct EpcModel {
    pools: BTreeMap<(u32, u32, u32), Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EpcJson {
    method: String,
    pools: Vec<EpcPool>,
}

impl From<EpcModel> for EpcJson {
    fn from(m: EpcModel) -> Self {
        let pools = m
            .pools
            .into_iter()
            .map(|((station, hour, month), values)| EpcPool { station, hour, month, values })
            .collect();
        Self { method: "epc".into(), pools }
    }
}

impl From<EpcJson> for EpcModel {
    fn from(j: EpcJson) -> Self {
        Self { pools: j.pools.into_iter().map(|p| ((p.station, p.hour, p.month), p.values)).collect() }
    }
}

impl EpcModel {
    pub fn fit(history: &Dataset) -> Result<Self> {
        let mut pools: BTreeMap<(u32, u32, u32), Vec<f64>> = BTreeMap::new();
        for c in &history.cases {
            let Some(y) = c.observation else { continue };
            for m in seasonal_window(c.month()) {
                pools.entry((c.station_id, c.hour_of_day(), m)).or_default().push(y);
            }
        }
        if pools.is_empty() {
            return Err(Error::Config("EPC history contains no observations".into()));
        }
        for v in pools.values_mut() {
            v.sort_by(f64::total_cmp);
        }
        let months: std::collections::BTreeSet<u32> = history.cases.iter().map(ForecastCase::month).collect();
        if months.len() < 12 {
            log::warn!("EPC history covers only {} calendar months; some pools are empty", months.len());
        }
        Ok(Self { pools })
    }

    pub fn pool(&self, station: u32, hour: u32, month: u32) -> Option<&[f64]> {
        self.pools.get(&(station, hour, month)).map(Vec::as_slice)
    }

    pub fn predict_key(&self, station: u32, hour: u32, month: u32) -> Result<EnsembleForecast<f64>> {
        match self.pool(station, hour, month) {
            Some(v) if !v.is_empty() => EnsembleForecast::new(v.to_vec()),
            _ => Err(Error::MissingKey(format!("EPC pool for station {station} hour {hour} month {month}"))),
        }
    }
}

impl Forecaster for EpcModel {
    fn method(&self) -> &'static str {
        "epc"
    }

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64> {
        self.predict_key(case.station_id, case.hour_of_day(), case.month()).map(ProbForecast::Ensemble)
    }
}
