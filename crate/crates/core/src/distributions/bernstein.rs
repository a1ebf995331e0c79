//! Quantile functions expanded in the Bernstein polynomial basis.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// `Q(τ) = Σ_l α_l B_{l,d}(τ)` with non-decreasing coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BernsteinQuantile<T> {
    pub coefficients: Vec<T>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Values of the `d + 1` Bernstein basis polynomials of degree `d` at `tau`.
pub fn bernstein_basis<T: Scalar>(degree: usize, tau: T) -> Vec<T> {
    let one_minus = T::one() - tau;
    (0..=degree)
        .map(|l| T::lit(binomial(degree, l)) * tau.powi(l as i32) * one_minus.powi((degree - l) as i32))
        .collect()
}

impl<T: Scalar> BernsteinQuantile<T> {
    pub fn new(coefficients: Vec<T>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(domain("Bernstein quantile needs at least one coefficient"));
        }
        if coefficients.windows(2).any(|w| w[1] < w[0]) {
            return Err(domain("Bernstein coefficients must be non-decreasing"));
        }
        Ok(Self { coefficients })
    }

    /// Coefficients as cumulative sums of non-negative increments.
    pub fn from_increments(increments: &[T]) -> Result<Self> {
        if increments.iter().any(|&a| !(a >= T::zero())) {
            return Err(domain("Bernstein increments must be non-negative"));
        }
        let mut acc = T::zero();
        let coefficients = increments
            .iter()
            .map(|&a| {
                acc = acc + a;
                acc
            })
            .collect();
        Self::new(coefficients)
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, tau: T) -> Result<T> {
        if !(tau >= T::zero() && tau <= T::one()) {
            return Err(domain(format!("quantile level {tau} outside [0, 1]")));
        }
        Ok(self.eval_unchecked(tau))
    }

    pub(crate) fn eval_unchecked(&self, tau: T) -> T {
        bernstein_basis(self.degree(), tau)
            .iter()
            .zip(&self.coefficients)
            .fold(T::zero(), |a, (&b, &c)| a + b * c)
    }

    /// `F(y)` by bisection on the monotone quantile function.
    pub fn cdf(&self, y: T) -> T {
        let lo_v = self.coefficients[0];
        let hi_v = *self.coefficients.last().unwrap();
        if y < lo_v {
            return T::zero();
        }
        if y >= hi_v {
            return T::one();
        }
        let (mut lo, mut hi) = (T::zero(), T::one());
        for _ in 0..100 {
            let mid = (lo + hi) / T::lit(2.0);
            if self.eval_unchecked(mid) <= y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < T::epsilon() {
                break;
            }
        }
        (lo + hi) / T::lit(2.0)
    }

    /// `∫ Q(τ) dτ`; each basis polynomial integrates to `1 / (d + 1)`.
    pub fn mean(&self) -> T {
        let n = T::lit(self.coefficients.len() as f64);
        self.coefficients.iter().fold(T::zero(), |a, &c| a + c) / n
    }

    pub fn median(&self) -> T {
        self.eval_unchecked(T::lit(0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_coefficients_give_constant() {
        let q = BernsteinQuantile::<f64>::new(vec![2.5; 7]).unwrap();
        for i in 0..=10 {
            assert!((q.eval(i as f64 / 10.0).unwrap() - 2.5).abs() < 1e-13);
        }
    }

    #[test]
    fn linear_and_quadratic_cases() {
        let q = BernsteinQuantile::<f64>::new(vec![0.0, 1.0]).unwrap();
        assert!((q.eval(0.3).unwrap() - 0.3).abs() < 1e-15);
        let q2 = BernsteinQuantile::<f64>::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert!((q2.eval(0.5).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn endpoints_are_outer_coefficients() {
        let q = BernsteinQuantile::<f64>::new(vec![1.0, 2.0, 4.0, 4.5]).unwrap();
        assert_eq!(q.eval(0.0).unwrap(), 1.0);
        assert_eq!(q.eval(1.0).unwrap(), 4.5);
        assert!(q.eval(1.2).is_err());
        assert!(q.eval(-0.1).is_err());
    }

    #[test]
    fn increments_recursion() {
        let q = BernsteinQuantile::<f64>::from_increments(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(q.coefficients, vec![1.0, 1.0, 1.0]);
        let q = BernsteinQuantile::<f64>::from_increments(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(q.coefficients, vec![0.0, 1.0, 3.0]);
        assert!(BernsteinQuantile::<f64>::from_increments(&[0.0, -1.0]).is_err());
    }

    #[test]
    fn cdf_inverts_quantile() {
        let q = BernsteinQuantile::<f64>::new(vec![0.5, 1.0, 2.0, 4.0, 7.0]).unwrap();
        for i in 1..20 {
            let t = i as f64 / 20.0;
            assert!((q.cdf(q.eval(t).unwrap()) - t).abs() < 1e-10);
        }
    }
}
