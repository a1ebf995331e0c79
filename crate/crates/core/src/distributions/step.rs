use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Discrete distribution given by a right-continuous step CDF on sorted
/// thresholds; the last CDF value is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepCdf<T> {
    pub thresholds: Vec<T>,
    pub cdf: Vec<T>,
}

impl<T: Scalar> StepCdf<T> {
    pub fn new(thresholds: Vec<T>, mut cdf: Vec<T>) -> Result<Self> {
        if thresholds.is_empty() || thresholds.len() != cdf.len() {
            return Err(domain("step CDF needs matching, non-empty thresholds and values"));
        }
        if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(domain("step CDF thresholds must be strictly increasing"));
        }
        if cdf.windows(2).any(|w| w[1] < w[0]) || cdf.iter().any(|&c| c < T::zero() || c > T::one() + T::prob_tol()) {
            return Err(domain("step CDF values must be non-decreasing within [0, 1]"));
        }
        if (*cdf.last().unwrap() - T::one()).abs() > T::lit(1e-9) {
            return Err(domain("step CDF must reach 1 at the last threshold"));
        }
        *cdf.last_mut().unwrap() = T::one();
        Ok(Self { thresholds, cdf })
    }

    fn masses(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.thresholds.iter().enumerate().map(move |(j, &t)| {
            let prev = if j == 0 { T::zero() } else { self.cdf[j - 1] };
            (t, self.cdf[j] - prev)
        })
    }

    pub fn cdf(&self, y: T) -> T {
        let k = self.thresholds.partition_point(|&t| t <= y);
        if k == 0 {
            T::zero()
        } else {
            self.cdf[k - 1]
        }
    }

    pub fn cdf_left(&self, y: T) -> T {
        let k = self.thresholds.partition_point(|&t| t < y);
        if k == 0 {
            T::zero()
        } else {
            self.cdf[k - 1]
        }
    }

    pub fn quantile(&self, p: T) -> T {
        let k = self.cdf.partition_point(|&c| c < p);
        self.thresholds[k.min(self.thresholds.len() - 1)]
    }

    pub fn mean(&self) -> T {
        self.masses().fold(T::zero(), |a, (t, m)| a + t * m)
    }

    pub fn median(&self) -> T {
        self.quantile(T::lit(0.5))
    }

    /// Exact `∫ (F(z) - 1{y <= z})² dz` over the constant pieces.
    pub fn crps(&self, y: T) -> T {
        let t = &self.thresholds;
        let n = t.len();
        let mut total = T::zero();
        if y < t[0] {
            total = total + (t[0] - y);
        }
        if y > t[n - 1] {
            total = total + (y - t[n - 1]);
        }
        for j in 0..n - 1 {
            let (a, b, f) = (t[j], t[j + 1], self.cdf[j]);
            let split = y.max(a).min(b);
            total = total + (split - a) * f * f + (b - split) * (T::one() - f) * (T::one() - f);
        }
        total
    }
}
