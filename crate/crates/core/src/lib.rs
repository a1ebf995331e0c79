//! Forecast distributions, proper scoring rules and verification tools for
//! postprocessing ensemble wind gust forecasts.
//!
//! Distributions and scoring rules are generic over [`Scalar`] (`f32` or
//! `f64`); model fitting and the data layer work in `f64`.

pub mod dataset;
pub mod distributions;
pub mod error;
pub mod scalar;
pub mod scoring;
pub mod verification;

pub use dataset::{DataSplit, Dataset, ForecastCase, Scenario, ScenarioConfig, SplitYears, Standardizer, TruthSpec};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ProbForecastF64 = distributions::ProbForecast<f64>;
pub type ProbForecastF32 = distributions::ProbForecast<f32>;
pub type TruncatedLogisticF64 = distributions::TruncatedLogistic<f64>;
pub type TruncatedLogisticF32 = distributions::TruncatedLogistic<f32>;
pub type EnsembleForecastF64 = distributions::EnsembleForecast<f64>;
pub type HistogramForecastF64 = distributions::HistogramForecast<f64>;
pub type BernsteinQuantileF64 = distributions::BernsteinQuantile<f64>;
pub type PiecewiseLinearQuantileF64 = distributions::PiecewiseLinearQuantile<f64>;

/// A fitted method that turns a forecast case into a predictive distribution.
pub trait Forecaster: Send + Sync {
    fn method(&self) -> &'static str;

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64>;

    fn predict_all(&self, cases: &[ForecastCase]) -> Result<Vec<ProbForecastF64>> {
        cases.iter().map(|c| self.predict(c)).collect()
    }
}
