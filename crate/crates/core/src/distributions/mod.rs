//! Probabilistic forecast representations.
//!
//! Every representation exposes a CDF (with left limit for uPIT), a
//! quantile function and the mean/median functionals used by the point
//! scores. [`ProbForecast`] is the tagged union handed around by the
//! postprocessing methods; its JSON form carries a `"type"` tag.

mod bernstein;
mod combine;
mod ensemble;
mod histogram;
mod piecewise;
mod step;
mod tlogis;

pub use bernstein::{bernstein_basis, BernsteinQuantile};
pub use combine::{params_average, vincentize, vincentize_bernstein, vincentize_piecewise};
pub use ensemble::{mean_difference_sorted, EnsembleForecast};
pub use histogram::{crps_uniform_with_masses, HistogramForecast};
pub use piecewise::PiecewiseLinearQuantile;
pub use step::StepCdf;
pub use tlogis::{CrpsGrad, TruncatedLogistic};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", bound = "T: Scalar")]
pub enum ProbForecast<T> {
    TruncatedLogistic(TruncatedLogistic<T>),
    Ensemble(EnsembleForecast<T>),
    Histogram(HistogramForecast<T>),
    Bernstein(BernsteinQuantile<T>),
    PiecewiseLinear(PiecewiseLinearQuantile<T>),
    StepCdf(StepCdf<T>),
}

impl<T: Scalar> ProbForecast<T> {
    pub fn cdf(&self, y: T) -> T {
        match self {
            Self::TruncatedLogistic(d) => d.cdf(y),
            Self::Ensemble(d) => d.cdf(y),
            Self::Histogram(d) => d.cdf(y),
            Self::Bernstein(d) => d.cdf(y),
            Self::PiecewiseLinear(d) => d.cdf(y),
            Self::StepCdf(d) => d.cdf(y),
        }
    }

    /// Left limit `F(y-)`; equals [`Self::cdf`] wherever the CDF is continuous.
    pub fn cdf_left(&self, y: T) -> T {
        match self {
            Self::Ensemble(d) => d.cdf_left(y),
            Self::PiecewiseLinear(d) => d.cdf_left(y),
            Self::StepCdf(d) => d.cdf_left(y),
            Self::Bernstein(d) => {
                // point masses only where consecutive outer coefficients tie
                let c = &d.coefficients;
                if y == c[0] && c.iter().all(|&v| v == y) {
                    T::zero()
                } else {
                    d.cdf(y)
                }
            }
            _ => self.cdf(y),
        }
    }

    /// Quantile at level `p`, clamped into `(0, 1)` for unbounded families.
    pub fn quantile(&self, p: T) -> T {
        match self {
            Self::TruncatedLogistic(d) => {
                let eps = T::lit(1e-12);
                d.quantile(p.max(eps).min(T::one() - eps)).expect("clamped level")
            }
            Self::Ensemble(d) => d.quantile(p),
            Self::Histogram(d) => d.quantile(p),
            Self::Bernstein(d) => d.eval_unchecked(p.max(T::zero()).min(T::one())),
            Self::PiecewiseLinear(d) => d.eval(p),
            Self::StepCdf(d) => d.quantile(p),
        }
    }

    pub fn quantiles(&self, levels: &[T]) -> Vec<T> {
        levels.iter().map(|&p| self.quantile(p)).collect()
    }

    pub fn mean(&self) -> T {
        match self {
            Self::TruncatedLogistic(d) => d.mean(),
            Self::Ensemble(d) => d.mean(),
            Self::Histogram(d) => d.mean(),
            Self::Bernstein(d) => d.mean(),
            Self::PiecewiseLinear(d) => d.mean(),
            Self::StepCdf(d) => d.mean(),
        }
    }

    pub fn median(&self) -> T {
        match self {
            Self::TruncatedLogistic(d) => d.median(),
            Self::Ensemble(d) => d.median(),
            Self::Histogram(d) => d.median(),
            Self::Bernstein(d) => d.median(),
            Self::PiecewiseLinear(d) => d.median(),
            Self::StepCdf(d) => d.median(),
        }
    }

    /// Density where the representation has one.
    pub fn pdf(&self, y: T) -> Option<T> {
        match self {
            Self::TruncatedLogistic(d) => Some(d.pdf(y)),
            Self::Histogram(d) => Some(d.pdf(y)),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::TruncatedLogistic(_) => "truncated_logistic",
            Self::Ensemble(_) => "ensemble",
            Self::Histogram(_) => "histogram",
            Self::Bernstein(_) => "bernstein",
            Self::PiecewiseLinear(_) => "piecewise_linear",
            Self::StepCdf(_) => "step_cdf",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_carries_type_tag() {
        let f = ProbForecast::TruncatedLogistic(TruncatedLogistic::<f64>::new(1.0, 2.0).unwrap());
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"type":"truncated_logistic","mu":1.0,"sigma":2.0}"#);
        let back: ProbForecast<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let h = ProbForecast::Histogram(HistogramForecast::<f64>::new(vec![0.0, 1.0], vec![1.0]).unwrap());
        assert!(serde_json::to_string(&h).unwrap().starts_with(r#"{"type":"histogram","edges""#));
    }
}
