//! Local seasonal EMOS with a zero-truncated logistic predictive distribution.

use std::collections::BTreeMap;

use gustpp_core::distributions::{ProbForecast, TruncatedLogistic};
use gustpp_core::scoring::{minimize_score, GradObjective, Optimizer};
use gustpp_core::{Dataset, Error, ForecastCase, Forecaster, ProbForecastF64, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::local::{missing, seasonal_tasks, SeasonalKey};

pub const SPREAD_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmosCoefficients {
    pub a: f64,
    /// `b = exp(b_tilde)`.
    pub b_tilde: f64,
    pub c: f64,
    pub d: f64,
}

impl EmosCoefficients {
    pub fn from_params(p: &[f64]) -> Self {
        Self { a: p[0], b_tilde: p[1], c: p[2], d: p[3] }
    }

    pub fn params(&self) -> [f64; 4] {
        [self.a, self.b_tilde, self.c, self.d]
    }

    pub fn b(&self) -> f64 {
        self.b_tilde.exp()
    }

    pub fn distribution(&self, mean: f64, sd: f64) -> Result<TruncatedLogistic<f64>> {
        let log_s = sd.max(SPREAD_FLOOR).ln();
        TruncatedLogistic::new(self.a + self.b() * mean, (self.c + self.d * log_s).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmosConfig {
    pub min_cases: usize,
    pub optimizer: Optimizer,
}

impl Default for EmosConfig {
    fn default() -> Self {
        Self { min_cases: 30, optimizer: Optimizer::default() }
    }
}

/// Ensemble mean, log of the floored sample sd, and observation.
pub(crate) fn emos_rows(cases: &[&ForecastCase]) -> Result<Vec<(f64, f64, f64)>> {
    cases
        .iter()
        .map(|c| Ok((c.ensemble_mean(), c.ensemble_sd().max(SPREAD_FLOOR).ln(), c.require_observation()?)))
        .collect()
}

/// Mean CRPS of the EMOS forecasts and its gradient in `(a, b_tilde, c, d)`.
pub fn emos_crps_loss(p: &[f64], rows: &[(f64, f64, f64)]) -> (f64, Vec<f64>) {
    let b = p[1].exp();
    let mut loss = 0.0;
    let mut g = vec![0.0; 4];
    for &(m, log_s, y) in rows {
        let sigma = (p[2] + p[3] * log_s).exp();
        let mu = p[0] + b * m;
        let Ok(dist) = TruncatedLogistic::new(mu, sigma) else {
            return (f64::NAN, vec![f64::NAN; 4]);
        };
        let cg = dist.crps_grad(y);
        loss += cg.crps;
        g[0] += cg.d_mu;
        g[1] += cg.d_mu * b * m;
        g[2] += cg.d_sigma * sigma;
        g[3] += cg.d_sigma * sigma * log_s;
    }
    let n = rows.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    (loss / n, g)
}

/// Minimum-CRPS fit from the identity-like start `(0, 0, 0, 0)`.
pub fn fit_emos(cases: &[&ForecastCase], cfg: &EmosConfig) -> Result<EmosCoefficients> {
    if cases.len() < cfg.min_cases {
        return Err(Error::Config(format!("EMOS needs at least {} cases, got {}", cfg.min_cases, cases.len())));
    }
    let rows = emos_rows(cases)?;
    let obj = GradObjective(|p: &[f64]| emos_crps_loss(p, &rows));
    let m = minimize_score(&obj, &[0.0; 4], &cfg.optimizer)?;
    if !m.converged() {
        log::warn!("EMOS fit did not converge; best loss {}", m.loss);
    }
    Ok(EmosCoefficients::from_params(&m.params))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "EmosJson", into = "EmosJson")]
pub struct EmosModel {
    pub coefficients: BTreeMap<SeasonalKey, EmosCoefficients>,
}

#[derive(Serialize, Deserialize)]
struct EmosEntry {
    station: u32,
    lead: u32,
    month: u32,
    a: f64,
    b_tilde: f64,
    c: f64,
    d: f64,
}

#[derive(Serialize, Deserialize)]
struct EmosJson {
    method: String,
    keys: Vec<EmosEntry>,
}

impl From<EmosModel> for EmosJson {
    fn from(m: EmosModel) -> Self {
        let keys = m
            .coefficients
            .into_iter()
            .map(|(k, c)| EmosEntry { station: k.station, lead: k.lead, month: k.month, a: c.a, b_tilde: c.b_tilde, c: c.c, d: c.d })
            .collect();
        Self { method: "emos".into(), keys }
    }
}

impl From<EmosJson> for EmosModel {
    fn from(j: EmosJson) -> Self {
        let coefficients = j
            .keys
            .into_iter()
            .map(|e| {
                let key = SeasonalKey { station: e.station, lead: e.lead, month: e.month };
                (key, EmosCoefficients { a: e.a, b_tilde: e.b_tilde, c: e.c, d: e.d })
            })
            .collect();
        Self { coefficients }
    }
}

impl EmosModel {
    pub fn fit(train: &Dataset, cfg: &EmosConfig) -> Result<Self> {
        let tasks = seasonal_tasks(train, cfg.min_cases)?;
        let fitted: Vec<(SeasonalKey, EmosCoefficients)> = tasks
            .par_iter()
            .map(|t| fit_emos(&t.cases, cfg).map(|c| (t.key, c)))
            .collect::<Result<_>>()?;
        Ok(Self { coefficients: fitted.into_iter().collect() })
    }

    pub fn predict_distribution(&self, case: &ForecastCase) -> Result<TruncatedLogistic<f64>> {
        let coef = self.coefficients.get(&SeasonalKey::of(case)).ok_or_else(|| missing("EMOS", case))?;
        coef.distribution(case.ensemble_mean(), case.ensemble_sd())
    }
}

impl Forecaster for EmosModel {
    fn method(&self) -> &'static str {
        "emos"
    }

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64> {
        self.predict_distribution(case).map(ProbForecast::TruncatedLogistic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_coefficients() {
        let d = EmosCoefficients::default().distribution(5.0, 3.0).unwrap();
        assert_eq!((d.mu, d.sigma), (5.0, 1.0));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let rows: Vec<(f64, f64, f64)> = (0..40)
            .map(|i| {
                let m = 2.0 + 0.37 * i as f64;
                (m, (0.5 + 0.05 * i as f64).ln(), m + ((i * 7) % 5) as f64 - 2.0 + 0.1)
            })
            .map(|(m, s, y): (f64, f64, f64)| (m, s, y.max(0.2)))
            .collect();
        let p = [0.3, -0.1, 0.2, 0.4];
        let (_, g) = emos_crps_loss(&p, &rows);
        for j in 0..4 {
            let h = 1e-6;
            let mut pp = p;
            pp[j] += h;
            let mut pm = p;
            pm[j] -= h;
            let fd = (emos_crps_loss(&pp, &rows).0 - emos_crps_loss(&pm, &rows).0) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7, "{j}: {fd} vs {}", g[j]);
        }
    }
}
