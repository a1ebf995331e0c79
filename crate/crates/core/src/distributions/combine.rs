//! Aggregation of forecasts from several model runs.

use super::{BernsteinQuantile, PiecewiseLinearQuantile, ProbForecast, TruncatedLogistic};
use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Arithmetic mean of location and scale parameters.
pub fn params_average<T: Scalar>(params: &[(T, T)]) -> Result<TruncatedLogistic<T>> {
    if params.is_empty() {
        return Err(domain("cannot average an empty parameter set"));
    }
    let n = T::lit(params.len() as f64);
    let (mu, sigma) = params
        .iter()
        .fold((T::zero(), T::zero()), |(a, b), &(m, s)| (a + m, b + s));
    TruncatedLogistic::new(mu / n, sigma / n)
}

/// Coefficient-wise mean; identical to the pointwise mean of the quantile
/// functions because `Q` is linear in its coefficients.
pub fn vincentize_bernstein<T: Scalar>(members: &[BernsteinQuantile<T>]) -> Result<BernsteinQuantile<T>> {
    let first = members.first().ok_or_else(|| domain("cannot vincentize an empty set"))?;
    let d = first.coefficients.len();
    if members.iter().any(|m| m.coefficients.len() != d) {
        return Err(domain("Bernstein forecasts differ in degree"));
    }
    let n = T::lit(members.len() as f64);
    let coefficients = (0..d)
        .map(|l| members.iter().fold(T::zero(), |a, m| a + m.coefficients[l]) / n)
        .collect();
    BernsteinQuantile::new(coefficients)
}

/// Pointwise mean of piecewise-linear quantile functions on the union of
/// their knot levels.
pub fn vincentize_piecewise<T: Scalar>(members: &[PiecewiseLinearQuantile<T>]) -> Result<PiecewiseLinearQuantile<T>> {
    if members.is_empty() {
        return Err(domain("cannot vincentize an empty set"));
    }
    let mut levels: Vec<T> = members.iter().flat_map(|m| m.levels.iter().copied()).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
    levels.dedup();
    let n = T::lit(members.len() as f64);
    let values = levels
        .iter()
        .map(|&t| members.iter().fold(T::zero(), |a, m| a + m.eval(t)) / n)
        .collect::<Vec<_>>();
    // tiny float drift can break monotonicity between nearly equal knots
    let mut values = values;
    for k in 1..values.len() {
        if values[k] < values[k - 1] {
            values[k] = values[k - 1];
        }
    }
    PiecewiseLinearQuantile::new(levels, values)
}

/// Equally weighted quantile averaging over one representation family.
/// Histograms are combined through their piecewise-linear quantile functions.
pub fn vincentize<T: Scalar>(members: &[ProbForecast<T>]) -> Result<ProbForecast<T>> {
    let first = members.first().ok_or_else(|| domain("cannot vincentize an empty set"))?;
    match first {
        ProbForecast::Bernstein(_) => {
            let qs = members
                .iter()
                .map(|m| match m {
                    ProbForecast::Bernstein(b) => Ok(b.clone()),
                    other => Err(domain(format!("mixed families: {}", other.kind()))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProbForecast::Bernstein(vincentize_bernstein(&qs)?))
        }
        ProbForecast::PiecewiseLinear(_) | ProbForecast::Histogram(_) => {
            let qs = members
                .iter()
                .map(|m| match m {
                    ProbForecast::PiecewiseLinear(q) => Ok(q.clone()),
                    ProbForecast::Histogram(h) => Ok(h.quantile_function()),
                    other => Err(domain(format!("mixed families: {}", other.kind()))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProbForecast::PiecewiseLinear(vincentize_piecewise(&qs)?))
        }
        other => Err(domain(format!("vincentization not defined for {}", other.kind()))),
    }
}
