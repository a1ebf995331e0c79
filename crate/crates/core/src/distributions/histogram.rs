//! Piecewise-uniform ("histogram") forecasts on fixed bin edges.

use serde::{Deserialize, Serialize};

use super::PiecewiseLinearQuantile;
use crate::error::{domain, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HistogramForecast<T> {
    /// `b_0 < b_1 < ... < b_N`
    pub edges: Vec<T>,
    /// `p_1, ..., p_N`, one per bin `[b_{l-1}, b_l)`
    pub probs: Vec<T>,
}

/// Integral of `g(z)^2` over an interval of length `h` where `g` is linear
/// from `g0` to `g1`.
#[inline]
fn sq_linear_integral<T: Scalar>(h: T, g0: T, g1: T) -> T {
    h * (g0 * g0 + g0 * g1 + g1 * g1) / T::lit(3.0)
}

/// CRPS of a uniform distribution on `[lower, upper]` carrying point mass
/// `mass_lower` on the lower edge and `mass_upper` on the upper edge, for an
/// observation inside `[lower, upper]`.
pub fn crps_uniform_with_masses<T: Scalar>(lower: T, upper: T, mass_lower: T, mass_upper: T, y: T) -> T {
    let y = y.max(lower).min(upper);
    let w = upper - lower;
    if w <= T::zero() {
        return T::zero();
    }
    let slope = (T::one() - mass_lower - mass_upper) / w;
    let g_at_y = mass_lower + slope * (y - lower);
    let g_top = T::one() - mass_upper;
    sq_linear_integral(y - lower, mass_lower, g_at_y)
        + sq_linear_integral(upper - y, T::one() - g_at_y, T::one() - g_top)
}

impl<T: Scalar> HistogramForecast<T> {
    pub fn new(edges: Vec<T>, probs: Vec<T>) -> Result<Self> {
        if edges.len() < 2 || probs.len() + 1 != edges.len() {
            return Err(domain(format!(
                "histogram needs N+1 edges for N probabilities (got {} edges, {} probs)",
                edges.len(),
                probs.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(domain("histogram edges must be finite and strictly increasing"));
        }
        if probs.iter().any(|&p| !(p >= T::zero())) {
            return Err(domain("histogram probabilities must be non-negative"));
        }
        let total = probs.iter().fold(T::zero(), |a, &p| a + p);
        if (total - T::one()).abs() > T::prob_tol() * T::lit(probs.len().max(1) as f64) {
            return Err(domain(format!("histogram probabilities sum to {total}, not 1")));
        }
        Ok(Self { edges, probs })
    }

    pub fn n_bins(&self) -> usize {
        self.probs.len()
    }

    /// Cumulative probabilities `0, p_1, p_1+p_2, ..., 1` (length N+1).
    pub fn cumulative(&self) -> Vec<T> {
        let mut c = Vec::with_capacity(self.probs.len() + 1);
        let mut acc = T::zero();
        c.push(acc);
        for &p in &self.probs {
            acc = (acc + p).min(T::one());
            c.push(acc);
        }
        let last = c.len() - 1;
        c[last] = T::one();
        c
    }

    /// Index `k` (0-based) of the bin `[b_k, b_{k+1})` containing `y`, if any.
    pub fn bin_of(&self, y: T) -> Option<usize> {
        let n = self.edges.len();
        if y < self.edges[0] || y >= self.edges[n - 1] {
            return None;
        }
        Some(self.edges.partition_point(|&e| e <= y) - 1)
    }

    pub fn cdf(&self, y: T) -> T {
        let n = self.edges.len();
        if y < self.edges[0] {
            return T::zero();
        }
        if y >= self.edges[n - 1] {
            return T::one();
        }
        let k = self.bin_of(y).expect("inside range");
        let cum: T = self.probs[..k].iter().fold(T::zero(), |a, &p| a + p);
        let w = self.edges[k + 1] - self.edges[k];
        cum + self.probs[k] * (y - self.edges[k]) / w
    }

    pub fn pdf(&self, y: T) -> T {
        match self.bin_of(y) {
            Some(k) => self.probs[k] / (self.edges[k + 1] - self.edges[k]),
            None => T::zero(),
        }
    }

    /// Lower generalized inverse; flat (zero-probability) stretches map to
    /// their left endpoint.
    pub fn quantile(&self, p: T) -> T {
        if p <= T::zero() {
            return self.edges[0];
        }
        let cum = self.cumulative();
        for k in 0..self.probs.len() {
            if self.probs[k] > T::zero() && p <= cum[k + 1] {
                let w = self.edges[k + 1] - self.edges[k];
                let t = ((p - cum[k]) / self.probs[k]).max(T::zero()).min(T::one());
                return self.edges[k] + t * w;
            }
        }
        self.edges[self.edges.len() - 1]
    }

    pub fn mean(&self) -> T {
        self.probs
            .iter()
            .enumerate()
            .fold(T::zero(), |a, (k, &p)| a + p * (self.edges[k] + self.edges[k + 1]) / T::lit(2.0))
    }

    pub fn median(&self) -> T {
        self.quantile(T::lit(0.5))
    }

    /// CRPS as `|y - clamp(y, b_0, b_N)|` plus one uniform-with-point-masses
    /// term per bin, each evaluated at the observation clamped into that bin.
    pub fn crps(&self, y: T) -> T {
        let n = self.edges.len();
        let clamped = y.max(self.edges[0]).min(self.edges[n - 1]);
        let cum = self.cumulative();
        let mut total = (y - clamped).abs();
        for k in 0..self.probs.len() {
            let mass_lower = cum[k];
            let mass_upper = T::one() - cum[k + 1];
            total = total + crps_uniform_with_masses(self.edges[k], self.edges[k + 1], mass_lower, mass_upper, y);
        }
        total
    }

    /// `-log f(y)`; `+inf` outside the support or in an empty bin.
    pub fn logscore(&self, y: T) -> T {
        match self.bin_of(y) {
            Some(k) if self.probs[k] > T::zero() => {
                (self.edges[k + 1] - self.edges[k]).ln() - self.probs[k].ln()
            }
            _ => T::infinity(),
        }
    }

    /// The piecewise-linear quantile function whose knots sit at the
    /// accumulated probabilities. Zero-probability bins collapse.
    pub fn quantile_function(&self) -> PiecewiseLinearQuantile<T> {
        let cum = self.cumulative();
        let mut levels = vec![T::zero()];
        let mut values = vec![self.edges[0]];
        for k in 0..self.probs.len() {
            let keep = k + 1 == self.probs.len() || cum[k + 1] < T::one();
            if keep && cum[k + 1] > *levels.last().unwrap() {
                levels.push(cum[k + 1]);
                values.push(self.edges[k + 1]);
            }
        }
        PiecewiseLinearQuantile { levels, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_bin_cdf_and_quantile() {
        let h = HistogramForecast::<f64>::new(vec![0.0, 1.0], vec![1.0]).unwrap();
        assert_eq!(h.cdf(0.25), 0.25);
        assert_eq!(h.cdf(-1.0), 0.0);
        assert_eq!(h.cdf(1.0), 1.0);
        assert_eq!(h.quantile(0.25), 0.25);
        assert!((h.crps(0.5) - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(h.logscore(0.5), 0.0);
    }

    #[test]
    fn two_bin_cdf() {
        let h = HistogramForecast::<f64>::new(vec![0.0, 1.0, 3.0], vec![0.5, 0.5]).unwrap();
        assert!((h.cdf(2.0) - 0.75).abs() < 1e-15);
        assert!((h.quantile(0.75) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn logscore_wide_bin() {
        let h = HistogramForecast::<f64>::new(vec![0.0, 2.0], vec![1.0]).unwrap();
        assert!((h.logscore(1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(h.logscore(2.5).is_infinite());
    }

    #[test]
    fn flat_region_quantile_returns_left_endpoint() {
        let h = HistogramForecast::<f64>::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(h.quantile(0.5), 1.0);
        assert!((h.quantile(0.75) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn observation_outside_range_adds_distance() {
        let h = HistogramForecast::<f64>::new(vec![0.0, 1.0], vec![1.0]).unwrap();
        // below: CRPS = |y - 0| + ∫_0^1 (1 - z)^2 dz
        assert!((h.crps(-2.0) - (2.0 + 1.0 / 3.0)).abs() < 1e-15);
        assert!((h.crps(3.0) - (2.0 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(HistogramForecast::<f64>::new(vec![0.0, 1.0], vec![0.7]).is_err());
        assert!(HistogramForecast::<f64>::new(vec![1.0, 0.0], vec![1.0]).is_err());
        assert!(HistogramForecast::<f64>::new(vec![0.0, 1.0, 2.0], vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn quantile_function_knots() {
        let h = HistogramForecast::<f64>::new(vec![0.0, 1.0, 3.0], vec![0.25, 0.75]).unwrap();
        let q = h.quantile_function();
        assert_eq!(q.levels, vec![0.0, 0.25, 1.0]);
        assert_eq!(q.values, vec![0.0, 1.0, 3.0]);
    }
}
