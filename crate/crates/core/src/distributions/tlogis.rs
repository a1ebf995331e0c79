//! Logistic distribution left-truncated at zero.
//!
//! All evaluations go through `softplus`/`sigmoid` of the standardized
//! arguments so that tiny scales and far-left locations stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::{sigmoid, softplus, softplus_inv, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TruncatedLogistic<T> {
    pub mu: T,
    pub sigma: T,
}

/// CRPS value together with its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrpsGrad<T> {
    pub crps: T,
    pub d_mu: T,
    pub d_sigma: T,
}

/// `log(1 + u) - u / (1 + u)` for `u >= 0`, accurate for small `u`.
fn log1p_minus_ratio<T: Scalar>(u: T) -> T {
    if u < T::lit(0.05) {
        // alternating series sum_{k>=2} (-1)^k (k-1)/k u^k
        let mut term = u * u;
        let mut acc = T::zero();
        let mut sign = T::one();
        for k in 2..40 {
            let kf = T::lit(k as f64);
            acc = acc + sign * (kf - T::one()) / kf * term;
            term = term * u;
            sign = -sign;
            if term < T::epsilon() * T::epsilon() {
                break;
            }
        }
        acc
    } else {
        u.ln_1p() - u / (T::one() + u)
    }
}

impl<T: Scalar> TruncatedLogistic<T> {
    pub fn new(mu: T, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() || !mu.is_finite() {
            return Err(domain(format!(
                "truncated logistic needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Standardized truncation point `-mu / sigma`.
    #[inline]
    fn lower(&self) -> T {
        -self.mu / self.sigma
    }

    pub fn cdf(&self, z: T) -> T {
        if z <= T::zero() {
            return T::zero();
        }
        let zs = (z - self.mu) / self.sigma;
        // 1 - Λ(-zs) / Λ(-l), in log space
        let r = softplus(self.lower()) - softplus(zs);
        (-r.exp_m1()).max(T::zero()).min(T::one())
    }

    pub fn ln_pdf(&self, z: T) -> T {
        if z < T::zero() {
            return T::neg_infinity();
        }
        let zs = (z - self.mu) / self.sigma;
        let ln_logistic = -zs.abs() - T::lit(2.0) * (-zs.abs()).exp().ln_1p();
        ln_logistic - self.sigma.ln() + softplus(self.lower())
    }

    pub fn pdf(&self, z: T) -> T {
        if z < T::zero() {
            T::zero()
        } else {
            self.ln_pdf(z).exp()
        }
    }

    pub fn quantile(&self, p: T) -> Result<T> {
        if !(p > T::zero() && p < T::one()) {
            return Err(domain(format!("quantile level {p} outside (0, 1)")));
        }
        let target = softplus(self.lower()) - (T::one() - p).ln();
        Ok((self.mu + self.sigma * softplus_inv(target)).max(T::zero()))
    }

    pub fn mean(&self) -> T {
        let w = self.mu / self.sigma;
        if w < T::lit(-30.0) {
            // far-left location: the truncated tail is exponential with scale sigma
            return self.sigma * (T::one() + T::lit(0.5) * w.exp());
        }
        self.sigma * softplus(w) * (T::one() + (-w).exp())
    }

    pub fn median(&self) -> T {
        self.quantile(T::lit(0.5)).expect("0.5 is a valid level")
    }

    /// Closed-form CRPS with gradient in `(mu, sigma)`.
    ///
    /// With `z = (y - mu)/sigma`, `l = -mu/sigma`, `D = Λ(-l)` and
    /// `φ(x) = log(1 + e^{-x})`:
    ///
    /// `CRPS = sigma * [(z - l) - 2 (φ(l) - φ(z)) / D + (φ(l) - D) / D²]` for `y >= 0`,
    /// plus `sigma * (l - z)` of pure mismatch mass when `y < 0`.
    pub fn crps_grad(&self, y: T) -> CrpsGrad<T> {
        let two = T::lit(2.0);
        let l = self.lower();
        let z = (y - self.mu) / self.sigma;
        let d = sigmoid(-l);
        let p0 = sigmoid(l);
        let phi_l = softplus(-l);
        // φ(l) - D == log1p(u) - u/(1+u) with u = e^{-l}
        let g = if l > T::lit(-30.0) {
            log1p_minus_ratio((-l).exp())
        } else {
            phi_l - d
        };
        let (j, j_z, j_l) = if z >= l {
            let phi_z = softplus(-z);
            let diff = phi_l - phi_z;
            let j = (z - l) - two * diff / d + g / (d * d);
            let j_z = T::one() - two * sigmoid(-z) / d;
            let j_l = two * p0 * (g / (d * d) - diff / d);
            (j, j_z, j_l)
        } else {
            let j = (l - z) + g / (d * d);
            (j, -T::one(), two * p0 * g / (d * d))
        };
        CrpsGrad {
            crps: self.sigma * j,
            d_mu: -(j_z + j_l),
            d_sigma: j - z * j_z - l * j_l,
        }
    }

    pub fn crps(&self, y: T) -> T {
        self.crps_grad(y).crps
    }

    /// Negative log-likelihood and its derivatives in `(mu, log sigma)`.
    pub fn nll_grad(&self, y: T) -> (T, T, T) {
        let two = T::lit(2.0);
        let z = (y - self.mu) / self.sigma;
        let w = self.mu / self.sigma;
        let nll = self.sigma.ln() + z + two * softplus(-z) - softplus(-w);
        let lam_neg_z = sigmoid(-z);
        let lam_w = sigmoid(w);
        let d_mu = (two * lam_neg_z - lam_w) / self.sigma;
        let d_log_sigma = T::one() - z * (T::one() - two * lam_neg_z) - w * (T::one() - lam_w);
        (nll, d_mu, d_log_sigma)
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> T {
        loop {
            let u: f64 = rng.gen();
            if u > 0.0 && u < 1.0 {
                return self.quantile(T::lit(u)).expect("u in (0,1)");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect_quantile(d: &TruncatedLogistic<f64>, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, d.mu.abs() + 100.0 * d.sigma);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cdf_truncation_point_and_limit() {
        let d = TruncatedLogistic::<f64>::new(5.0, 2.0).unwrap();
        assert_eq!(d.cdf(0.0), 0.0);
        assert_eq!(d.cdf(-3.0), 0.0);
        assert!((d.cdf(1e4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn median_of_standard_case_is_ln3() {
        let d = TruncatedLogistic::<f64>::new(0.0, 1.0).unwrap();
        let q = d.quantile(0.5).unwrap();
        assert!((q - 3f64.ln()).abs() < 1e-12);
        assert!((bisect_quantile(&d, 0.5) - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_scale_and_level() {
        assert!(TruncatedLogistic::<f64>::new(1.0, 0.0).is_err());
        assert!(TruncatedLogistic::<f64>::new(1.0, -1.0).is_err());
        let d = TruncatedLogistic::<f64>::new(1.0, 1.0).unwrap();
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.0).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &(mu, sigma) in &[(5.0, 2.0), (-3.0, 1.0), (0.0, 0.05), (12.0, 4.0), (-40.0, 2.0)] {
            let d = TruncatedLogistic::<f64>::new(mu, sigma).unwrap();
            for i in 1..100 {
                let p = i as f64 / 100.0;
                let q = d.quantile(p).unwrap();
                assert!((d.cdf(q) - p).abs() < 1e-10, "mu={mu} sigma={sigma} p={p}");
            }
        }
    }

    #[test]
    fn pdf_integrates_to_cdf() {
        let d = TruncatedLogistic::<f64>::new(2.0, 1.5).unwrap();
        let (a, b, n) = (0.0, 6.0, 20_000);
        let h = (b - a) / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let x = a + (i as f64 + 0.5) * h;
            s += d.pdf(x) * h;
        }
        assert!((s - d.cdf(b)).abs() < 1e-7);
    }

    #[test]
    fn mean_matches_numeric_integral() {
        for &(mu, sigma) in &[(5.0, 2.0), (-2.0, 1.0), (0.5, 3.0)] {
            let d = TruncatedLogistic::<f64>::new(mu, sigma).unwrap();
            let (b, n) = (mu.abs() + 80.0 * sigma, 400_000);
            let h = b / n as f64;
            // E X = ∫ (1 - F)
            let m: f64 = (0..n).map(|i| (1.0 - d.cdf((i as f64 + 0.5) * h)) * h).sum();
            assert!((m - d.mean()).abs() < 1e-6, "{m} vs {}", d.mean());
        }
    }

    #[test]
    fn crps_gradient_matches_finite_differences() {
        let h = 1e-6;
        for &(mu, sigma, y) in &[(5.0, 2.0, 3.0), (-1.0, 0.7, 0.4), (1.0, 1.0, -0.5), (8.0, 0.3, 12.0)] {
            let d = TruncatedLogistic::<f64>::new(mu, sigma).unwrap();
            let g = d.crps_grad(y);
            let fd_mu = (TruncatedLogistic::<f64>::new(mu + h, sigma).unwrap().crps(y)
                - TruncatedLogistic::<f64>::new(mu - h, sigma).unwrap().crps(y))
                / (2.0 * h);
            let fd_s = (TruncatedLogistic::<f64>::new(mu, sigma + h).unwrap().crps(y)
                - TruncatedLogistic::<f64>::new(mu, sigma - h).unwrap().crps(y))
                / (2.0 * h);
            assert!((g.d_mu - fd_mu).abs() < 1e-6, "{} vs {}", g.d_mu, fd_mu);
            assert!((g.d_sigma - fd_s).abs() < 1e-6, "{} vs {}", g.d_sigma, fd_s);
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let h = 1e-6;
        let nll = |mu: f64, ls: f64, y: f64| TruncatedLogistic::<f64>::new(mu, ls.exp()).unwrap().nll_grad(y).0;
        for &(mu, ls, y) in &[(5.0, 0.3, 3.0), (-1.0, -0.5, 0.4), (2.0, 1.2, 9.0)] {
            let (v, dm, ds) = TruncatedLogistic::<f64>::new(mu, f64::exp(ls)).unwrap().nll_grad(y);
            assert!((v + TruncatedLogistic::<f64>::new(mu, f64::exp(ls)).unwrap().ln_pdf(y)).abs() < 1e-12);
            let fm = (nll(mu + h, ls, y) - nll(mu - h, ls, y)) / (2.0 * h);
            let fs = (nll(mu, ls + h, y) - nll(mu, ls - h, y)) / (2.0 * h);
            assert!((dm - fm).abs() < 1e-6 && (ds - fs).abs() < 1e-6);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let d = TruncatedLogistic::new(0.0_f32, 1.0).unwrap();
        assert!((d.quantile(0.5).unwrap() - 3f32.ln()).abs() < 1e-5);
        assert!(d.crps(1.0) > 0.0);
    }
}
