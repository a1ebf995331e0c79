//! EMOS with extended linear links fitted by likelihood-based gradient
//! boosting with AIC stopping.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use gustpp_core::distributions::{ProbForecast, TruncatedLogistic};
use gustpp_core::scoring::{minimize_score, GradObjective, Optimizer};
use gustpp_core::{Dataset, Error, ForecastCase, Forecaster, ProbForecastF64, Result, Standardizer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::local::{local_groups, LocalKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub max_iter: usize,
    pub step: f64,
    pub min_cases: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self { max_iter: 1000, step: 0.05, min_cases: 30 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Location,
    Scale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub iteration: usize,
    pub link: Link,
    /// Index into the standardized feature list.
    pub feature: usize,
    pub step: f64,
    /// Mean training NLL after the update.
    pub nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmCoefficients {
    pub a: f64,
    pub b: Vec<f64>,
    pub c: f64,
    pub d: Vec<f64>,
    pub history: Vec<Selection>,
    /// Iteration at which the AIC was minimal.
    pub best_iteration: usize,
}

impl GbmCoefficients {
    pub fn intercept_only(a: f64, c: f64, p: usize) -> Self {
        Self { a, b: vec![0.0; p], c, d: vec![0.0; p], history: Vec::new(), best_iteration: 0 }
    }

    pub fn location(&self, x: &[f64]) -> f64 {
        self.a + dot(&self.b, x)
    }

    pub fn log_scale(&self, x: &[f64]) -> f64 {
        self.c + dot(&self.d, x)
    }

    pub fn distribution(&self, x: &[f64]) -> Result<TruncatedLogistic<f64>> {
        TruncatedLogistic::new(self.location(x), self.log_scale(x).exp())
    }

    pub fn n_nonzero(&self) -> usize {
        self.b.iter().chain(&self.d).filter(|v| **v != 0.0).count()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Logistic Fisher information for the log-scale parameter.
const INFO_LOG_SCALE: f64 = (3.0 + PI * PI) / 9.0;

struct State {
    eta_mu: Vec<f64>,
    eta_s: Vec<f64>,
}

fn total_nll(eta_mu: &[f64], eta_s: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        match TruncatedLogistic::new(eta_mu[i], eta_s[i].exp()) {
            Ok(d) => s += d.nll_grad(y[i]).0,
            Err(_) => return f64::INFINITY,
        }
    }
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Unconditional maximum likelihood `(mu, log sigma)`.
fn intercept_mle(y: &[f64]) -> Result<(f64, f64)> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt().max(1e-3);
    let obj = GradObjective(|p: &[f64]| {
        let Ok(d) = TruncatedLogistic::new(p[0], p[1].exp()) else {
            return (f64::NAN, vec![f64::NAN; 2]);
        };
        let (mut l, mut g0, mut g1) = (0.0, 0.0, 0.0);
        for &v in y {
            let (nll, dm, ds) = d.nll_grad(v);
            l += nll;
            g0 += dm;
            g1 += ds;
        }
        (l / n, vec![g0 / n, g1 / n])
    });
    let init = [mean, (sd * 3f64.sqrt() / PI).ln()];
    let m = minimize_score(&obj, &init, &Optimizer::default())?;
    Ok((m.params[0], m.params[1]))
}

/// Boosting fit on standardized features `x` (rows) and observations `y`.
pub fn fit_emos_gb(x: &[Vec<f64>], y: &[f64], cfg: &GbmConfig) -> Result<GbmCoefficients> {
    let n = y.len();
    if n < 2 || x.len() != n {
        return Err(Error::Config(format!("EMOS-GB needs matching features and at least 2 observations, got {n}")));
    }
    let p = x.first().map_or(0, Vec::len);
    let (a0, c0) = intercept_mle(y)?;
    let mut coef = GbmCoefficients::intercept_only(a0, c0, p);
    let mut st = State { eta_mu: vec![a0; n], eta_s: vec![c0; n] };
    let mut nll = total_nll(&st.eta_mu, &st.eta_s, y);
    let aic = |nll: f64, k: usize| 2.0 * nll + 2.0 * (k + 2) as f64;
    let mut best = (aic(nll, 0), coef.clone());
    // column views and squared norms
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let sxx: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    let mut r_mu = vec![0.0; n];
    let mut r_s = vec![0.0; n];
    for iter in 1..=cfg.max_iter {
        for i in 0..n {
            let sigma = st.eta_s[i].exp();
            let d = TruncatedLogistic::new(st.eta_mu[i], sigma)?;
            let (_, dm, ds) = d.nll_grad(y[i]);
            r_mu[i] = -3.0 * sigma * sigma * dm;
            r_s[i] = -ds / INFO_LOG_SCALE;
        }
        let mean_mu = r_mu.iter().sum::<f64>() / n as f64;
        let mean_s = r_s.iter().sum::<f64>() / n as f64;
        let pick = |r: &[f64], mean_r: f64| -> Option<(usize, f64)> {
            let srr: f64 = r.iter().map(|v| (v - mean_r).powi(2)).sum();
            let mut best: Option<(usize, f64, f64)> = None;
            for j in 0..p {
                if sxx[j] <= 0.0 || srr <= 0.0 {
                    continue;
                }
                let sxr = dot(&cols[j], r);
                let corr = sxr / (sxx[j] * srr).sqrt();
                if best.is_none_or(|(_, c, _)| corr.abs() > c) {
                    best = Some((j, corr.abs(), sxr / sxx[j]));
                }
            }
            best.map(|(j, _, slope)| (j, slope))
        };
        let cand_mu = pick(&r_mu, mean_mu);
        let cand_s = pick(&r_s, mean_s);
        let mut step = cfg.step;
        let mut accepted = None;
        for _ in 0..6 {
            let mut trials: Vec<(Link, usize, f64, f64, Vec<f64>, Vec<f64>)> = Vec::new();
            for (link, cand) in [(Link::Location, cand_mu), (Link::Scale, cand_s)] {
                let Some((j, slope)) = cand else { continue };
                let delta = step * slope;
                let mut em = st.eta_mu.clone();
                let mut es = st.eta_s.clone();
                for i in 0..n {
                    em[i] += step * mean_mu;
                    es[i] += step * mean_s;
                    match link {
                        Link::Location => em[i] += delta * cols[j][i],
                        Link::Scale => es[i] += delta * cols[j][i],
                    }
                }
                let l = total_nll(&em, &es, y);
                trials.push((link, j, delta, l, em, es));
            }
            if let Some(t) = trials.into_iter().filter(|t| t.3 <= nll).min_by(|u, v| u.3.total_cmp(&v.3)) {
                accepted = Some((t, step));
                break;
            }
            step *= 0.5;
        }
        let Some(((link, j, delta, l, em, es), used_step)) = accepted else {
            log::warn!("EMOS-GB stopped at iteration {iter}: no update decreases the likelihood");
            break;
        };
        coef.a += used_step * mean_mu;
        coef.c += used_step * mean_s;
        match link {
            Link::Location => coef.b[j] += delta,
            Link::Scale => coef.d[j] += delta,
        }
        coef.history.push(Selection { iteration: iter, link, feature: j, step: delta, nll: l / n as f64 });
        st.eta_mu = em;
        st.eta_s = es;
        nll = l;
        let a = aic(nll, coef.n_nonzero());
        if a < best.0 {
            let mut snapshot = coef.clone();
            snapshot.best_iteration = iter;
            snapshot.history.clear();
            best = (a, snapshot);
        }
    }
    let mut out = best.1;
    out.history = coef.history;
    Ok(out)
}

/// One local model with its feature standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmLocal {
    pub standardizer: Standardizer,
    pub coefficients: GbmCoefficients,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "GbmJson", into = "GbmJson")]
pub struct GbmModel {
    pub predictor_names: Vec<String>,
    pub fits: BTreeMap<LocalKey, GbmLocal>,
}

#[derive(Serialize, Deserialize)]
struct SparseCoef {
    predictor: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct GbmEntry {
    station: u32,
    lead: u32,
    a: f64,
    c: f64,
    location: Vec<SparseCoef>,
    scale: Vec<SparseCoef>,
    best_iteration: usize,
    history: Vec<Selection>,
    standardizer: Standardizer,
}

#[derive(Serialize, Deserialize)]
struct GbmJson {
    method: String,
    predictors: Vec<String>,
    keys: Vec<GbmEntry>,
}

impl From<GbmModel> for GbmJson {
    fn from(m: GbmModel) -> Self {
        let keys = m
            .fits
            .into_iter()
            .map(|(k, f)| {
                let sparse = |v: &[f64]| {
                    v.iter()
                        .enumerate()
                        .filter(|(_, c)| **c != 0.0)
                        .map(|(j, &value)| SparseCoef { predictor: f.standardizer.names[j].clone(), value })
                        .collect()
                };
                GbmEntry {
                    station: k.station,
                    lead: k.lead,
                    a: f.coefficients.a,
                    c: f.coefficients.c,
                    location: sparse(&f.coefficients.b),
                    scale: sparse(&f.coefficients.d),
                    best_iteration: f.coefficients.best_iteration,
                    history: f.coefficients.history,
                    standardizer: f.standardizer,
                }
            })
            .collect();
        Self { method: "emos-gb".into(), predictors: m.predictor_names, keys }
    }
}

impl From<GbmJson> for GbmModel {
    fn from(j: GbmJson) -> Self {
        let fits = j
            .keys
            .into_iter()
            .map(|e| {
                let p = e.standardizer.names.len();
                let dense = |s: &[SparseCoef]| {
                    let mut v = vec![0.0; p];
                    for c in s {
                        if let Some(idx) = e.standardizer.names.iter().position(|n| *n == c.predictor) {
                            v[idx] = c.value;
                        }
                    }
                    v
                };
                let coefficients = GbmCoefficients {
                    a: e.a,
                    b: dense(&e.location),
                    c: e.c,
                    d: dense(&e.scale),
                    history: e.history,
                    best_iteration: e.best_iteration,
                };
                (LocalKey { station: e.station, lead: e.lead }, GbmLocal { standardizer: e.standardizer, coefficients })
            })
            .collect();
        Self { predictor_names: j.predictors, fits }
    }
}

/// Mean absolute standardized coefficient per predictor and link.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoefficientImportance {
    pub location: Vec<(String, f64)>,
    pub scale: Vec<(String, f64)>,
}

impl GbmModel {
    pub fn fit(train: &Dataset, cfg: &GbmConfig) -> Result<Self> {
        let groups: Vec<(LocalKey, Vec<&ForecastCase>)> = local_groups(train).into_iter().collect();
        let names = train.predictor_names.clone();
        let fits: Vec<(LocalKey, GbmLocal)> = groups
            .par_iter()
            .map(|(key, cases)| {
                if cases.len() < cfg.min_cases {
                    return Err(Error::Config(format!(
                        "EMOS-GB station {} lead {}: {} cases, at least {} required",
                        key.station,
                        key.lead,
                        cases.len(),
                        cfg.min_cases
                    )));
                }
                let raw: Vec<&[f64]> = cases.iter().map(|c| c.predictors.as_slice()).collect();
                let standardizer = Standardizer::fit(&names, &raw)?;
                let x: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.apply(r)).collect();
                let y: Vec<f64> = cases.iter().map(|c| c.require_observation()).collect::<Result<_>>()?;
                let coefficients = fit_emos_gb(&x, &y, cfg)?;
                Ok((*key, GbmLocal { standardizer, coefficients }))
            })
            .collect::<Result<_>>()?;
        Ok(Self { predictor_names: names, fits: fits.into_iter().collect() })
    }

    /// Errors naming the first predictor the model needs but `names` lacks.
    pub fn check_schema(&self, names: &[String]) -> Result<()> {
        for (i, n) in self.predictor_names.iter().enumerate() {
            if names.get(i) != Some(n) {
                return Err(Error::MissingKey(format!("predictor `{n}`")));
            }
        }
        Ok(())
    }

    /// Importance averaged over local models; predictors never selected
    /// anywhere are omitted. Sorted by decreasing value.
    pub fn coefficient_importance(&self) -> CoefficientImportance {
        let mut loc: BTreeMap<String, f64> = BTreeMap::new();
        let mut sc: BTreeMap<String, f64> = BTreeMap::new();
        let k = self.fits.len().max(1) as f64;
        for f in self.fits.values() {
            for (j, name) in f.standardizer.names.iter().enumerate() {
                if f.coefficients.b[j] != 0.0 {
                    *loc.entry(name.clone()).or_default() += f.coefficients.b[j].abs() / k;
                }
                if f.coefficients.d[j] != 0.0 {
                    *sc.entry(name.clone()).or_default() += f.coefficients.d[j].abs() / k;
                }
            }
        }
        let sorted = |m: BTreeMap<String, f64>| {
            let mut v: Vec<(String, f64)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v
        };
        CoefficientImportance { location: sorted(loc), scale: sorted(sc) }
    }
}

impl Forecaster for GbmModel {
    fn method(&self) -> &'static str {
        "emos-gb"
    }

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64> {
        let f = self.fits.get(&LocalKey::of(case)).ok_or_else(|| {
            Error::MissingKey(format!("EMOS-GB model for station {} lead {}", case.station_id, case.lead_time_h))
        })?;
        if case.predictors.len() != self.predictor_names.len() {
            let missing = self.predictor_names.get(case.predictors.len()).cloned().unwrap_or_default();
            return Err(Error::MissingKey(format!("predictor `{missing}`")));
        }
        let x = f.standardizer.apply(&case.predictors);
        f.coefficients.distribution(&x).map(ProbForecast::TruncatedLogistic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_iterations_give_intercept_only() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 - 25.0) / 14.0]).collect();
        let y: Vec<f64> = (0..50).map(|i| 5.0 + (i % 7) as f64).collect();
        let c = fit_emos_gb(&x, &y, &GbmConfig { max_iter: 0, ..Default::default() }).unwrap();
        assert_eq!(c.n_nonzero(), 0);
        let d = c.distribution(&x[0]).unwrap();
        assert!(d.sigma > 0.0);
    }
}
