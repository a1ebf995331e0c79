//! Output heads: activation, training loss and its gradient with respect
//! to the raw network outputs.

use gustpp_core::distributions::{
    bernstein_basis, BernsteinQuantile, HistogramForecast, ProbForecast, TruncatedLogistic,
};
use gustpp_core::scoring::{quantile_loss, training_levels};
use gustpp_core::{ProbForecastF64, Result};
use serde::{Deserialize, Serialize};

use super::network::{sigmoid, softplus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Drn,
    Bqn,
    Hen,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Drn => "drn",
            Self::Bqn => "bqn",
            Self::Hen => "hen",
        }
    }
}

/// Smallest scale handed to the truncated logistic.
const SIGMA_FLOOR: f64 = 1e-8;

/// A head with everything its loss needs.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Drn,
    Bqn {
        degree: usize,
        levels: Vec<f64>,
        /// `basis[i][l] = B_{l,d}(levels[i])`.
        basis: Vec<Vec<f64>>,
    },
    Hen {
        edges: Vec<f64>,
    },
}

impl Head {
    pub fn bqn(degree: usize) -> Self {
        let levels = training_levels::<f64>();
        let basis = levels.iter().map(|&t| bernstein_basis(degree, t)).collect();
        Head::Bqn { degree, levels, basis }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Drn => HeadKind::Drn,
            Head::Bqn { .. } => HeadKind::Bqn,
            Head::Hen { .. } => HeadKind::Hen,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Head::Drn => 2,
            Head::Bqn { degree, .. } => degree + 1,
            Head::Hen { edges } => edges.len() - 1,
        }
    }

    /// Loss at raw outputs `out`; writes `dloss/dout` into `grad`.
    pub fn loss_grad(&self, out: &[f64], y: f64, grad: &mut [f64]) -> f64 {
        match self {
            Head::Drn => {
                let (mu, sigma) = drn_params(out);
                let c = TruncatedLogistic::new(mu, sigma).expect("positive scale").crps_grad(y);
                grad[0] = c.d_mu * sigmoid(out[0]);
                grad[1] = if softplus(out[1]) > SIGMA_FLOOR { c.d_sigma * sigmoid(out[1]) } else { 0.0 };
                c.crps
            }
            Head::Bqn { levels, basis, .. } => {
                let inc: Vec<f64> = out.iter().map(|&o| softplus(o)).collect();
                let mut alpha = inc.clone();
                for l in 1..alpha.len() {
                    alpha[l] += alpha[l - 1];
                }
                let k = levels.len() as f64;
                let mut d_alpha = vec![0.0; alpha.len()];
                let mut loss = 0.0;
                for (tau, b) in levels.iter().zip(basis) {
                    let q: f64 = alpha.iter().zip(b).map(|(a, w)| a * w).sum();
                    loss += quantile_loss(q, y, *tau);
                    let dq = ((if q >= y { 1.0 } else { 0.0 }) - tau) / k;
                    for (da, w) in d_alpha.iter_mut().zip(b) {
                        *da += dq * w;
                    }
                }
                let mut acc = 0.0;
                for m in (0..alpha.len()).rev() {
                    acc += d_alpha[m];
                    grad[m] = acc * sigmoid(out[m]);
                }
                loss / k
            }
            Head::Hen { edges } => {
                let k = hen_bin(edges, y);
                let p = softmax(out);
                for (g, &pi) in grad.iter_mut().zip(&p) {
                    *g = pi;
                }
                grad[k] -= 1.0;
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + out.iter().map(|o| (o - max).exp()).sum::<f64>().ln();
                lse - out[k]
            }
        }
    }

    pub fn loss(&self, out: &[f64], y: f64) -> f64 {
        let mut g = vec![0.0; out.len()];
        self.loss_grad(out, y, &mut g)
    }

    pub fn forecast(&self, out: &[f64]) -> Result<ProbForecastF64> {
        Ok(match self {
            Head::Drn => {
                let (mu, sigma) = drn_params(out);
                ProbForecast::TruncatedLogistic(TruncatedLogistic::new(mu, sigma)?)
            }
            Head::Bqn { .. } => {
                let inc: Vec<f64> = out.iter().map(|&o| softplus(o)).collect();
                ProbForecast::Bernstein(BernsteinQuantile::from_increments(&inc)?)
            }
            Head::Hen { edges } => ProbForecast::Histogram(HistogramForecast::new(edges.clone(), softmax(out))?),
        })
    }
}

pub fn drn_params(out: &[f64]) -> (f64, f64) {
    (softplus(out[0]), softplus(out[1]).max(SIGMA_FLOOR))
}

pub fn softmax(out: &[f64]) -> Vec<f64> {
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = out.iter().map(|o| (o - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Bin of `y`, clamped into the edge bins when outside `[b_0, b_N)`.
pub fn hen_bin(edges: &[f64], y: f64) -> usize {
    let n = edges.len() - 1;
    edges[1..n].partition_point(|&b| b <= y)
}
