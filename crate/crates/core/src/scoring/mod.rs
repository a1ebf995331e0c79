//! Proper scoring rules and consistent scoring functions.

mod optim;
mod oracle;

pub use optim::{minimize_score, FnObjective, GradObjective, Minimum, Objective, OptimStatus, Optimizer};
pub use oracle::{crps_numeric_oracle, integrate_adaptive};

use serde::{Deserialize, Serialize};

use crate::distributions::ProbForecast;
use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Nominal coverage of the range of a 20-member ensemble, `(m - 1) / (m + 1)`.
pub const NOMINAL_COVERAGE: f64 = 19.0 / 21.0;

pub const N_EVAL_LEVELS: usize = 125;
pub const N_TRAIN_LEVELS: usize = 99;

/// `i / 126` for `i = 1..=125`; contains 1/21, 1/2 and 20/21.
pub fn evaluation_levels<T: Scalar>() -> Vec<T> {
    (1..=N_EVAL_LEVELS)
        .map(|i| T::lit(i as f64 / (N_EVAL_LEVELS + 1) as f64))
        .collect()
}

/// `0.01, 0.02, ..., 0.99`.
pub fn training_levels<T: Scalar>() -> Vec<T> {
    (1..=N_TRAIN_LEVELS)
        .map(|i| T::lit(i as f64 / (N_TRAIN_LEVELS + 1) as f64))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "arg")]
pub enum ScoreName {
    Crps,
    Ls,
    Ql(f64),
    Se,
    Fe,
    Brier(f64),
    PiLength,
    PiCovered,
}

impl std::fmt::Display for ScoreName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Crps => write!(f, "CRPS"),
            Self::Ls => write!(f, "LS"),
            Self::Ql(t) => write!(f, "QL({t})"),
            Self::Se => write!(f, "SE"),
            Self::Fe => write!(f, "FE"),
            Self::Brier(t) => write!(f, "Brier({t})"),
            Self::PiLength => write!(f, "PILength"),
            Self::PiCovered => write!(f, "PICovered"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreValue {
    pub name: ScoreName,
    pub value: f64,
}

/// `(q - y)(1{q >= y} - τ)`.
#[inline]
pub fn quantile_loss<T: Scalar>(q: T, y: T, tau: T) -> T {
    let ind = if q >= y { T::one() } else { T::zero() };
    (q - y) * (ind - tau)
}

/// Twice the mean quantile loss over `levels`; approximates the CRPS.
pub fn crps_from_quantiles<T: Scalar>(quantiles: &[T], levels: &[T], y: T) -> T {
    let n = T::lit(levels.len() as f64);
    let total = quantiles
        .iter()
        .zip(levels)
        .fold(T::zero(), |a, (&q, &t)| a + quantile_loss(q, y, t));
    T::lit(2.0) * total / n
}

/// Closed forms for parametric, ensemble, histogram and step forecasts;
/// quantile-function forecasts are scored through the 125-level grid.
pub fn crps<T: Scalar>(forecast: &ProbForecast<T>, y: T) -> T {
    match forecast {
        ProbForecast::TruncatedLogistic(d) => d.crps(y),
        ProbForecast::Ensemble(d) => d.crps(y),
        ProbForecast::Histogram(d) => d.crps(y),
        ProbForecast::StepCdf(d) => d.crps(y),
        ProbForecast::Bernstein(_) | ProbForecast::PiecewiseLinear(_) => {
            let levels = evaluation_levels::<T>();
            crps_from_quantiles(&forecast.quantiles(&levels), &levels, y)
        }
    }
}

/// `-log f(y)`; `+inf` where the density vanishes. Errors for forecasts
/// without a density (ensembles, step CDFs).
pub fn logscore<T: Scalar>(forecast: &ProbForecast<T>, y: T) -> Result<T> {
    let density = match forecast {
        ProbForecast::TruncatedLogistic(d) => return Ok(-d.ln_pdf(y)),
        ProbForecast::Histogram(h) => return Ok(h.logscore(y)),
        ProbForecast::PiecewiseLinear(q) => {
            let n = q.values.len();
            if y < q.values[0] || y >= q.values[n - 1] {
                T::zero()
            } else {
                let k = q.values.partition_point(|&v| v <= y) - 1;
                (q.levels[k + 1] - q.levels[k]) / (q.values[k + 1] - q.values[k])
            }
        }
        ProbForecast::Bernstein(b) => {
            let c = &b.coefficients;
            if y < c[0] || y > c[c.len() - 1] {
                T::zero()
            } else {
                let tau = b.cdf(y);
                let d = b.degree();
                let slope = crate::distributions::bernstein_basis(d - 1, tau)
                    .iter()
                    .enumerate()
                    .fold(T::zero(), |a, (l, &bl)| a + bl * (c[l + 1] - c[l]));
                T::one() / (T::lit(d as f64) * slope)
            }
        }
        other => return Err(domain(format!("log score undefined for {} forecasts", other.kind()))),
    };
    Ok(if density > T::zero() { -density.ln() } else { T::infinity() })
}

pub fn squared_error<T: Scalar>(forecast: &ProbForecast<T>, y: T) -> T {
    let e = forecast.mean() - y;
    e * e
}

/// Median minus observation.
pub fn forecast_error<T: Scalar>(forecast: &ProbForecast<T>, y: T) -> T {
    forecast.median() - y
}

/// `(P(Y > t) - 1{y > t})²`.
pub fn brier<T: Scalar>(forecast: &ProbForecast<T>, y: T, threshold: T) -> Result<T> {
    if !(threshold > T::zero()) {
        return Err(domain("Brier threshold must be positive"));
    }
    let p_exceed = T::one() - forecast.cdf(threshold);
    let o = if y > threshold { T::one() } else { T::zero() };
    Ok((p_exceed - o) * (p_exceed - o))
}

/// Central prediction interval with coverage `gamma`.
pub fn prediction_interval<T: Scalar>(forecast: &ProbForecast<T>, gamma: T) -> (T, T) {
    let two = T::lit(2.0);
    (
        forecast.quantile((T::one() - gamma) / two),
        forecast.quantile((T::one() + gamma) / two),
    )
}

/// `(length, covered)` of the nominal 19/21 interval.
pub fn pi_metrics<T: Scalar>(forecast: &ProbForecast<T>, y: T) -> (T, bool) {
    let (lo, hi) = prediction_interval(forecast, T::lit(NOMINAL_COVERAGE));
    (hi - lo, lo <= y && y <= hi)
}

/// All standard scores for one forecast case; `LS` is reported only where
/// a density exists.
pub fn score_all<T: Scalar>(forecast: &ProbForecast<T>, y: T, brier_thresholds: &[T]) -> Vec<ScoreValue> {
    let (len, covered) = pi_metrics(forecast, y);
    let mut out = vec![
        ScoreValue { name: ScoreName::Crps, value: crps(forecast, y).as_f64() },
        ScoreValue { name: ScoreName::Se, value: squared_error(forecast, y).as_f64() },
        ScoreValue { name: ScoreName::Fe, value: forecast_error(forecast, y).as_f64() },
        ScoreValue { name: ScoreName::PiLength, value: len.as_f64() },
        ScoreValue { name: ScoreName::PiCovered, value: if covered { 1.0 } else { 0.0 } },
    ];
    if let Ok(ls) = logscore(forecast, y) {
        out.push(ScoreValue { name: ScoreName::Ls, value: ls.as_f64() });
    }
    for &t in brier_thresholds {
        if let Ok(b) = brier(forecast, y, t) {
            out.push(ScoreValue { name: ScoreName::Brier(t.as_f64()), value: b.as_f64() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::*;

    #[test]
    fn quantile_loss_examples() {
        assert_eq!(quantile_loss(3.0, 3.0, 0.3), 0.0);
        assert_eq!(quantile_loss(2.0, 4.0, 0.5), 1.0);
        assert!((quantile_loss(4.0_f64, 2.0, 0.9) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn level_grids() {
        let e = evaluation_levels::<f64>();
        assert_eq!(e.len(), 125);
        assert!(e.iter().any(|&t| (t - 1.0 / 21.0).abs() < 1e-15));
        assert!(e.iter().any(|&t| (t - 20.0 / 21.0).abs() < 1e-15));
        assert!(e.iter().any(|&t| t == 0.5));
        let t = training_levels::<f64>();
        assert_eq!((t.len(), t[0], t[98]), (99, 0.01, 0.99));
    }

    #[test]
    fn degenerate_ensemble_is_absolute_error() {
        let f = ProbForecast::Ensemble(EnsembleForecast::<f64>::new(vec![3.5]).unwrap());
        assert!((crps(&f, 1.25) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn nominal_coverage_value() {
        assert!((NOMINAL_COVERAGE - 0.9048).abs() < 5e-5);
        let e = ProbForecast::Ensemble(EnsembleForecast::<f64>::new((1..=20).map(f64::from).collect()).unwrap());
        let (lo, hi) = prediction_interval(&e, NOMINAL_COVERAGE);
        assert_eq!((lo, hi), (1.0, 20.0));
    }

    #[test]
    fn fe_zero_at_median_of_symmetric_forecast() {
        let h = ProbForecast::Histogram(HistogramForecast::<f64>::new(vec![0.0, 1.0, 2.0], vec![0.5, 0.5]).unwrap());
        assert_eq!(forecast_error(&h, 1.0), 0.0);
        assert!((squared_error(&h, 3.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn brier_below_support() {
        let t = ProbForecast::TruncatedLogistic(TruncatedLogistic::<f64>::new(10.0, 1.0).unwrap());
        // P(Y > t) = 1 exactly for t below the truncation-free bulk only in the limit
        let h = ProbForecast::Histogram(HistogramForecast::<f64>::new(vec![5.0, 6.0], vec![1.0]).unwrap());
        assert_eq!(brier(&h, 5.5, 1.0).unwrap(), 0.0);
        assert!(brier(&t, 5.5, 1.0).unwrap() < 1e-6);
        assert!(brier(&h, 5.5, 0.0).is_err());
    }

    #[test]
    fn logscores() {
        let h = ProbForecast::Histogram(HistogramForecast::<f64>::new(vec![0.0, 2.0], vec![1.0]).unwrap());
        assert!((logscore(&h, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(logscore(&h, 5.0).unwrap().is_infinite());
        let u = ProbForecast::PiecewiseLinear(PiecewiseLinearQuantile::<f64>::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap());
        assert_eq!(logscore(&u, 0.5).unwrap(), 0.0);
        let b = ProbForecast::Bernstein(BernsteinQuantile::<f64>::new(vec![0.0, 1.0]).unwrap());
        assert!(logscore(&b, 0.5).unwrap().abs() < 1e-12);
        let e = ProbForecast::Ensemble(EnsembleForecast::<f64>::new(vec![1.0]).unwrap());
        assert!(logscore(&e, 1.0).is_err());
    }

    #[test]
    fn quantile_crps_approximates_closed_form() {
        let d = TruncatedLogistic::<f64>::new(6.0, 1.5).unwrap();
        let levels = training_levels::<f64>();
        for &y in &[2.0, 6.0, 9.5] {
            let qs: Vec<f64> = levels.iter().map(|&t| d.quantile(t).unwrap()).collect();
            let approx = crps_from_quantiles(&qs, &levels, y);
            let exact = d.crps(y);
            assert!((approx - exact).abs() / exact < 0.02, "{approx} vs {exact}");
        }
    }
}
