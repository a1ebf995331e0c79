use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Quantile function linear between knots `(τ_k, q_k)` with `τ_0 = 0` and
/// `τ_K = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PiecewiseLinearQuantile<T> {
    pub levels: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> PiecewiseLinearQuantile<T> {
    pub fn new(levels: Vec<T>, values: Vec<T>) -> Result<Self> {
        if levels.len() < 2 || levels.len() != values.len() {
            return Err(domain("piecewise quantile needs >= 2 knots with matching values"));
        }
        if levels[0] != T::zero() || *levels.last().unwrap() != T::one() {
            return Err(domain("piecewise quantile levels must start at 0 and end at 1"));
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(domain("piecewise quantile levels must be strictly increasing"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) || values.iter().any(|v| !v.is_finite()) {
            return Err(domain("piecewise quantile values must be finite and non-decreasing"));
        }
        Ok(Self { levels, values })
    }

    pub fn eval(&self, tau: T) -> T {
        let tau = tau.max(T::zero()).min(T::one());
        let k = self.levels.partition_point(|&l| l <= tau);
        if k >= self.levels.len() {
            return *self.values.last().unwrap();
        }
        let k = k.max(1);
        let (t0, t1) = (self.levels[k - 1], self.levels[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (v1 - v0) * (tau - t0) / (t1 - t0)
    }

    /// `sup { τ : Q(τ) <= y }`.
    pub fn cdf(&self, y: T) -> T {
        let n = self.values.len();
        if y < self.values[0] {
            return T::zero();
        }
        if y >= self.values[n - 1] {
            return T::one();
        }
        let k = self.values.partition_point(|&v| v <= y) - 1;
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        let (t0, t1) = (self.levels[k], self.levels[k + 1]);
        t0 + (t1 - t0) * (y - v0) / (v1 - v0)
    }

    /// `inf { τ : Q(τ) >= y }`, the left limit of the CDF.
    pub fn cdf_left(&self, y: T) -> T {
        if y <= self.values[0] {
            return T::zero();
        }
        if y > *self.values.last().unwrap() {
            return T::one();
        }
        let k = self.values.partition_point(|&v| v < y);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        let (t0, t1) = (self.levels[k - 1], self.levels[k]);
        t0 + (t1 - t0) * (y - v0) / (v1 - v0)
    }

    pub fn mean(&self) -> T {
        (1..self.levels.len()).fold(T::zero(), |a, k| {
            a + (self.levels[k] - self.levels[k - 1]) * (self.values[k] + self.values[k - 1]) / T::lit(2.0)
        })
    }

    pub fn median(&self) -> T {
        self.eval(T::lit(0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_inverse() {
        let q = PiecewiseLinearQuantile::<f64>::new(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(q.eval(0.25), 0.5);
        assert_eq!(q.eval(0.75), 2.0);
        assert_eq!(q.cdf(2.0), 0.75);
        assert_eq!(q.cdf_left(2.0), 0.75);
        assert_eq!(q.mean(), 0.5 * 0.5 + 0.5 * 2.0);
    }

    #[test]
    fn flat_segment_is_a_jump_in_the_cdf() {
        let q = PiecewiseLinearQuantile::<f64>::new(vec![0.0, 0.2, 0.6, 1.0], vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((q.cdf(1.0) - 0.6).abs() < 1e-15);
        assert!((q.cdf_left(1.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(PiecewiseLinearQuantile::<f64>::new(vec![0.0, 1.0], vec![2.0, 1.0]).is_err());
        assert!(PiecewiseLinearQuantile::<f64>::new(vec![0.1, 1.0], vec![0.0, 1.0]).is_err());
    }
}
