//! Member-by-member postprocessing with sub-ensemble specific coefficients.

use std::collections::BTreeMap;

use gustpp_core::dataset::{N_MEMBERS, N_SUBENSEMBLES, SUBENSEMBLE_SIZE};
use gustpp_core::distributions::{mean_difference_sorted, EnsembleForecast, ProbForecast};
use gustpp_core::scoring::{minimize_score, GradObjective, Optimizer};
use gustpp_core::{Dataset, Error, ForecastCase, Forecaster, ProbForecastF64, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::local::{missing, seasonal_tasks, SeasonalKey};

pub const DELTA_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbmCoefficients {
    pub a: f64,
    pub b: [f64; N_SUBENSEMBLES],
    pub c: f64,
    pub d: [f64; N_SUBENSEMBLES],
}

impl MbmCoefficients {
    pub fn identity() -> Self {
        Self { a: 0.0, b: [1.0; N_SUBENSEMBLES], c: 1.0, d: [0.0; N_SUBENSEMBLES] }
    }

    /// Layout `(a, b1..b4, c, d1..d4)`.
    pub fn from_params(p: &[f64]) -> Self {
        let mut b = [0.0; N_SUBENSEMBLES];
        let mut d = [0.0; N_SUBENSEMBLES];
        b.copy_from_slice(&p[1..1 + N_SUBENSEMBLES]);
        d.copy_from_slice(&p[2 + N_SUBENSEMBLES..2 + 2 * N_SUBENSEMBLES]);
        Self { a: p[0], b, c: p[1 + N_SUBENSEMBLES], d }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = vec![self.a];
        p.extend_from_slice(&self.b);
        p.push(self.c);
        p.extend_from_slice(&self.d);
        p
    }

    /// Stretch factors `c + d_k / delta_k` for one ensemble.
    pub fn gammas(&self, ensemble: &[f64]) -> [f64; N_SUBENSEMBLES] {
        let s = SubensembleStats::new(ensemble);
        std::array::from_fn(|k| self.c + self.d[k] / s.delta[k])
    }
}

/// Sub-ensemble means and floored mean differences.
#[derive(Clone, Copy, Debug)]
pub struct SubensembleStats {
    pub mean: [f64; N_SUBENSEMBLES],
    pub delta: [f64; N_SUBENSEMBLES],
}

impl SubensembleStats {
    pub fn new(ensemble: &[f64]) -> Self {
        assert_eq!(ensemble.len(), N_MEMBERS, "MBM expects {N_MEMBERS} members");
        let mut mean = [0.0; N_SUBENSEMBLES];
        let mut delta = [0.0; N_SUBENSEMBLES];
        for k in 0..N_SUBENSEMBLES {
            let mut g: Vec<f64> = ensemble[k * SUBENSEMBLE_SIZE..(k + 1) * SUBENSEMBLE_SIZE].to_vec();
            mean[k] = g.iter().sum::<f64>() / SUBENSEMBLE_SIZE as f64;
            g.sort_by(f64::total_cmp);
            delta[k] = mean_difference_sorted(&g).max(DELTA_FLOOR);
        }
        Self { mean, delta }
    }
}

pub fn mbm_transform(coef: &MbmCoefficients, ensemble: &[f64]) -> Vec<f64> {
    let s = SubensembleStats::new(ensemble);
    transform_with(coef, ensemble, &s)
}

fn transform_with(coef: &MbmCoefficients, ensemble: &[f64], s: &SubensembleStats) -> Vec<f64> {
    ensemble
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let k = i / SUBENSEMBLE_SIZE;
            coef.a + coef.b[k] * s.mean[k] + (coef.c + coef.d[k] / s.delta[k]) * (x - s.mean[k])
        })
        .collect()
}

struct MbmRow<'a> {
    x: &'a [f64],
    stats: SubensembleStats,
    y: f64,
}

/// Mean ensemble CRPS of the transformed ensembles and its gradient.
fn mbm_loss(p: &[f64], rows: &[MbmRow]) -> (f64, Vec<f64>) {
    let coef = MbmCoefficients::from_params(p);
    let m = N_MEMBERS as f64;
    let mut loss = 0.0;
    let mut g = vec![0.0; p.len()];
    let mut order: Vec<usize> = (0..N_MEMBERS).collect();
    for r in rows {
        let xt = transform_with(&coef, r.x, &r.stats);
        order.sort_by(|&i, &j| xt[i].total_cmp(&xt[j]));
        let mut abs_err = 0.0;
        let mut spread = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            abs_err += (xt[i] - r.y).abs();
            spread += (2.0 * rank as f64 - m + 1.0) * xt[i];
            // d CRPS / d x_i = sign(x_i - y)/m - (2 rank - m + 1)/m^2
            let dxi = (xt[i] - r.y).signum() / m - (2.0 * rank as f64 - m + 1.0) / (m * m);
            let k = i / SUBENSEMBLE_SIZE;
            let dev = r.x[i] - r.stats.mean[k];
            g[0] += dxi;
            g[1 + k] += dxi * r.stats.mean[k];
            g[1 + N_SUBENSEMBLES] += dxi * dev;
            g[2 + N_SUBENSEMBLES + k] += dxi * dev / r.stats.delta[k];
        }
        loss += abs_err / m - spread / (m * m);
    }
    let n = rows.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    (loss / n, g)
}

/// Training loss at `coef`: mean CRPS of the transformed ensembles.
pub fn mbm_training_loss(coef: &MbmCoefficients, cases: &[&ForecastCase]) -> Result<f64> {
    let rows = rows(cases)?;
    Ok(mbm_loss(&coef.params(), &rows).0)
}

fn rows<'a>(cases: &[&'a ForecastCase]) -> Result<Vec<MbmRow<'a>>> {
    cases
        .iter()
        .map(|c| Ok(MbmRow { x: &c.ensemble, stats: SubensembleStats::new(&c.ensemble), y: c.require_observation()? }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MbmConfig {
    pub min_cases: usize,
    pub optimizer: Optimizer,
}

impl Default for MbmConfig {
    fn default() -> Self {
        Self { min_cases: 30, optimizer: Optimizer::default() }
    }
}

/// Minimum-CRPS fit started from the identity transform.
pub fn fit_mbm(cases: &[&ForecastCase], cfg: &MbmConfig) -> Result<MbmCoefficients> {
    if cases.len() < cfg.min_cases {
        return Err(Error::Config(format!("MBM needs at least {} cases, got {}", cfg.min_cases, cases.len())));
    }
    let rows = rows(cases)?;
    let obj = GradObjective(|p: &[f64]| mbm_loss(p, &rows));
    let m = minimize_score(&obj, &MbmCoefficients::identity().params(), &cfg.optimizer)?;
    Ok(MbmCoefficients::from_params(&m.params))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "MbmJson", into = "MbmJson")]
pub struct MbmModel {
    pub coefficients: BTreeMap<SeasonalKey, MbmCoefficients>,
}

#[derive(Serialize, Deserialize)]
struct MbmEntry {
    station: u32,
    lead: u32,
    month: u32,
    a: f64,
    b1: f64,
    b2: f64,
    b3: f64,
    b4: f64,
    c: f64,
    d1: f64,
    d2: f64,
    d3: f64,
    d4: f64,
}

#[derive(Serialize, Deserialize)]
struct MbmJson {
    method: String,
    keys: Vec<MbmEntry>,
}

impl From<MbmModel> for MbmJson {
    fn from(m: MbmModel) -> Self {
        let keys = m
            .coefficients
            .into_iter()
            .map(|(k, c)| MbmEntry {
                station: k.station,
                lead: k.lead,
                month: k.month,
                a: c.a,
                b1: c.b[0],
                b2: c.b[1],
                b3: c.b[2],
                b4: c.b[3],
                c: c.c,
                d1: c.d[0],
                d2: c.d[1],
                d3: c.d[2],
                d4: c.d[3],
            })
            .collect();
        Self { method: "mbm".into(), keys }
    }
}

impl From<MbmJson> for MbmModel {
    fn from(j: MbmJson) -> Self {
        let coefficients = j
            .keys
            .into_iter()
            .map(|e| {
                let key = SeasonalKey { station: e.station, lead: e.lead, month: e.month };
                (key, MbmCoefficients { a: e.a, b: [e.b1, e.b2, e.b3, e.b4], c: e.c, d: [e.d1, e.d2, e.d3, e.d4] })
            })
            .collect();
        Self { coefficients }
    }
}

impl MbmModel {
    pub fn fit(train: &Dataset, cfg: &MbmConfig) -> Result<Self> {
        let tasks = seasonal_tasks(train, cfg.min_cases)?;
        let fitted: Vec<(SeasonalKey, MbmCoefficients)> =
            tasks.par_iter().map(|t| fit_mbm(&t.cases, cfg).map(|c| (t.key, c))).collect::<Result<_>>()?;
        Ok(Self { coefficients: fitted.into_iter().collect() })
    }

    pub fn coefficients_for(&self, case: &ForecastCase) -> Result<&MbmCoefficients> {
        self.coefficients.get(&SeasonalKey::of(case)).ok_or_else(|| missing("MBM", case))
    }
}

impl Forecaster for MbmModel {
    fn method(&self) -> &'static str {
        "mbm"
    }

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64> {
        let coef = self.coefficients_for(case)?;
        EnsembleForecast::new(mbm_transform(coef, &case.ensemble)).map(ProbForecast::Ensemble)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens() -> Vec<f64> {
        (0..20).map(|i| 3.0 + ((i * 7) % 11) as f64 * 0.5).collect()
    }

    #[test]
    fn identity_and_collapse() {
        let x = ens();
        let id = mbm_transform(&MbmCoefficients::identity(), &x);
        for (a, b) in id.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        let collapse = MbmCoefficients { a: 2.0, b: [0.0; 4], c: 0.0, d: [0.0; 4] };
        assert!(mbm_transform(&collapse, &x).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn loss_equals_mean_ensemble_crps_and_gradient_matches() {
        let cases: Vec<ForecastCase> = (0..15)
            .map(|j| ForecastCase {
                station_id: 1,
                date: chrono::NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
                lead_time_h: 0,
                ensemble: (0..20).map(|i| 2.0 + ((i * 7 + j * 3) % 13) as f64 * 0.41 + 0.01 * i as f64).collect(),
                predictors: vec![],
                observation: Some(3.0 + 0.3 * j as f64),
            })
            .collect();
        let refs: Vec<&ForecastCase> = cases.iter().collect();
        let coef = MbmCoefficients { a: 0.3, b: [0.9, 1.1, 1.0, 0.8], c: 0.7, d: [0.1, -0.2, 0.3, 0.05] };
        let direct: f64 = cases
            .iter()
            .map(|c| EnsembleForecast::new(mbm_transform(&coef, &c.ensemble)).unwrap().crps(c.observation.unwrap()))
            .sum::<f64>()
            / cases.len() as f64;
        assert!((mbm_training_loss(&coef, &refs).unwrap() - direct).abs() < 1e-12);
        let rows = rows(&refs).unwrap();
        let p = coef.params();
        let (_, g) = mbm_loss(&p, &rows);
        for j in 0..p.len() {
            let h = 1e-7;
            let mut pp = p.clone();
            pp[j] += h;
            let mut pm = p.clone();
            pm[j] -= h;
            let fd = (mbm_loss(&pp, &rows).0 - mbm_loss(&pm, &rows).0) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6, "{j}: {fd} vs {}", g[j]);
        }
    }
}
