use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Finite ensemble interpreted through its empirical CDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EnsembleForecast<T> {
    pub members: Vec<T>,
}

impl<T: Scalar> EnsembleForecast<T> {
    pub fn new(members: Vec<T>) -> Result<Self> {
        if members.is_empty() {
            return Err(domain("ensemble needs at least one member"));
        }
        if members.iter().any(|x| !x.is_finite()) {
            return Err(domain("ensemble members must be finite"));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sorted(&self) -> Vec<T> {
        let mut v = self.members.clone();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite members"));
        v
    }

    fn m(&self) -> T {
        T::lit(self.members.len() as f64)
    }

    /// Right-continuous empirical CDF.
    pub fn cdf(&self, y: T) -> T {
        T::lit(self.members.iter().filter(|&&x| x <= y).count() as f64) / self.m()
    }

    /// Left limit `F(y-)`.
    pub fn cdf_left(&self, y: T) -> T {
        T::lit(self.members.iter().filter(|&&x| x < y).count() as f64) / self.m()
    }

    /// Lower generalized inverse of the empirical CDF.
    pub fn quantile(&self, p: T) -> T {
        let s = self.sorted();
        let k = (p * self.m()).ceil().as_f64() as usize;
        s[k.clamp(1, s.len()) - 1]
    }

    pub fn mean(&self) -> T {
        self.members.iter().fold(T::zero(), |a, &x| a + x) / self.m()
    }

    /// Sample median (average of the two central order statistics for even sizes).
    pub fn median(&self) -> T {
        let s = self.sorted();
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / T::lit(2.0)
        }
    }

    /// Sample standard deviation (divisor `m - 1`); zero for a single member.
    pub fn sd(&self) -> T {
        sample_sd(&self.members)
    }

    /// Mean absolute difference `δ(x) = m⁻² Σ_i Σ_l |x_i - x_l|`.
    pub fn mean_difference(&self) -> T {
        mean_difference_sorted(&self.sorted())
    }

    /// `m⁻¹ Σ |x_i - y| - δ(x) / 2`.
    pub fn crps(&self, y: T) -> T {
        let s = self.sorted();
        let mae = s.iter().fold(T::zero(), |a, &x| a + (x - y).abs()) / self.m();
        mae - mean_difference_sorted(&s) / T::lit(2.0)
    }
}

pub(crate) fn sample_sd<T: Scalar>(x: &[T]) -> T {
    let n = x.len();
    if n < 2 {
        return T::zero();
    }
    let nf = T::lit(n as f64);
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / nf;
    let ss = x.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
    (ss / (nf - T::one())).sqrt()
}

/// `δ` from sorted values: `2 m⁻² Σ_i (2i - m - 1) x_(i)` with 1-based `i`.
pub fn mean_difference_sorted<T: Scalar>(sorted: &[T]) -> T {
    let m = sorted.len();
    let mf = T::lit(m as f64);
    let acc = sorted.iter().enumerate().fold(T::zero(), |a, (i, &x)| {
        a + T::lit((2 * (i + 1)) as f64 - m as f64 - 1.0) * x
    });
    T::lit(2.0) * acc / (mf * mf)
}
