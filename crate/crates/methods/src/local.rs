//! Local (per station and lead time) and seasonal training sets.

use std::collections::BTreeMap;

use gustpp_core::{Dataset, Error, ForecastCase, Result};

/// Previous, current and next month.
pub fn seasonal_window(month: u32) -> [u32; 3] {
    assert!((1..=12).contains(&month), "month {month} outside 1..=12");
    let prev = if month == 1 { 12 } else { month - 1 };
    let next = if month == 12 { 1 } else { month + 1 };
    [prev, month, next]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalKey {
    pub station: u32,
    pub lead: u32,
}

impl LocalKey {
    pub fn of(case: &ForecastCase) -> Self {
        Self { station: case.station_id, lead: case.lead_time_h }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeasonalKey {
    pub station: u32,
    pub lead: u32,
    pub month: u32,
}

impl SeasonalKey {
    pub fn of(case: &ForecastCase) -> Self {
        Self { station: case.station_id, lead: case.lead_time_h, month: case.month() }
    }
}

/// Cases with observations grouped by station and lead time.
pub fn local_groups(data: &Dataset) -> BTreeMap<LocalKey, Vec<&ForecastCase>> {
    let mut groups: BTreeMap<LocalKey, Vec<&ForecastCase>> = BTreeMap::new();
    for c in data.cases.iter().filter(|c| c.observation.is_some()) {
        groups.entry(LocalKey::of(c)).or_default().push(c);
    }
    groups
}

pub struct SeasonalTask<'a> {
    pub key: SeasonalKey,
    pub cases: Vec<&'a ForecastCase>,
    /// Window too sparse; all months of the station and lead time are used.
    pub fallback: bool,
}

/// One training set per station, lead time and calendar month.
pub fn seasonal_tasks(data: &Dataset, min_cases: usize) -> Result<Vec<SeasonalTask<'_>>> {
    let mut tasks = Vec::new();
    for (lk, cases) in local_groups(data) {
        if cases.len() < min_cases {
            return Err(Error::Config(format!(
                "station {} lead {}: {} training cases, at least {min_cases} required",
                lk.station,
                lk.lead,
                cases.len()
            )));
        }
        for month in 1..=12 {
            let window = seasonal_window(month);
            let subset: Vec<&ForecastCase> = cases.iter().copied().filter(|c| window.contains(&c.month())).collect();
            let key = SeasonalKey { station: lk.station, lead: lk.lead, month };
            if subset.len() >= min_cases {
                tasks.push(SeasonalTask { key, cases: subset, fallback: false });
            } else {
                log::warn!("station {} lead {} month {month}: {} cases in window, using all months", lk.station, lk.lead, subset.len());
                tasks.push(SeasonalTask { key, cases: cases.clone(), fallback: true });
            }
        }
    }
    Ok(tasks)
}

pub(crate) fn missing(what: &str, case: &ForecastCase) -> Error {
    Error::MissingKey(format!(
        "{what} model for station {} lead {} month {}",
        case.station_id,
        case.lead_time_h,
        case.month()
    ))
}

/// Gust summary statistic kept among the `_sd` columns.
pub const GUST_SD: &str = "vmax_sd";

/// Predictor positions used by the tree and network models: every column
/// except spreads of non-gust variables.
pub fn mean_feature_columns(names: &[String]) -> Vec<usize> {
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.ends_with("_sd") || n.as_str() == GUST_SD)
        .map(|(j, _)| j)
        .collect()
}
