//! Data-driven histogram bins for the HEN head.

use gustpp_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Maximal bin widths in m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinCaps {
    pub first: f64,
    pub interior: f64,
    pub last: f64,
}

impl Default for BinCaps {
    fn default() -> Self {
        Self { first: 2.0, interior: 5.0, last: 7.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HenBinning {
    pub edges: Vec<f64>,
    /// Training observations per bin.
    pub counts: Vec<usize>,
}

impl HenBinning {
    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Starts from one bin per distinct observation and repeatedly merges
    /// the least populated bin into its less populated neighbour, subject
    /// to the width caps.
    pub fn build(observations: &[f64], n_bins: usize, caps: BinCaps) -> Result<Self> {
        let mut obs: Vec<f64> = observations.iter().copied().filter(|v| v.is_finite()).collect();
        obs.sort_by(f64::total_cmp);
        let mut values: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for v in obs {
            if values.last() == Some(&v) {
                *counts.last_mut().unwrap() += 1;
            } else {
                values.push(v);
                counts.push(1);
            }
        }
        let m = values.len();
        if n_bins == 0 || m < n_bins.max(2) {
            return Err(Error::Config(format!(
                "HEN binning needs at least {} distinct observations, found {m}",
                n_bins.max(2)
            )));
        }
        let mut edges = Vec::with_capacity(m + 1);
        let lower = values[0] - 0.5 * (values[1] - values[0]);
        edges.push(if values[0] >= 0.0 { lower.max(0.0) } else { lower });
        for w in values.windows(2) {
            edges.push(0.5 * (w[0] + w[1]));
        }
        edges.push(values[m - 1] + 0.5 * (values[m - 1] - values[m - 2]));

        let mut caps = caps;
        let span = edges[m] - edges[0];
        while counts.len() > n_bins {
            match pick_merge(&edges, &counts, &caps) {
                Some(i) => {
                    counts[i] += counts[i + 1];
                    counts.remove(i + 1);
                    edges.remove(i + 1);
                }
                None if caps.interior < span => {
                    caps.interior *= 1.25;
                    log::warn!("HEN bin caps cannot be met; interior cap relaxed to {:.2} m/s", caps.interior);
                }
                None => {
                    caps = BinCaps { first: f64::INFINITY, interior: f64::INFINITY, last: f64::INFINITY };
                    log::warn!("HEN bin caps cannot be met; caps dropped");
                }
            }
        }
        Ok(Self { edges, counts })
    }
}

/// Left index of the pair to merge next.
fn pick_merge(edges: &[f64], counts: &[usize], caps: &BinCaps) -> Option<usize> {
    let n = counts.len();
    let allowed = |i: usize| {
        let width = edges[i + 2] - edges[i];
        let cap = if i == 0 {
            caps.first
        } else if i + 2 == n {
            caps.last
        } else {
            caps.interior
        };
        width <= cap
    };
    let try_bin = |k: usize| -> Option<usize> {
        let left = (k > 0).then(|| k - 1);
        let right = (k + 1 < n).then_some(k);
        let order = match (left, right) {
            (Some(l), Some(r)) => {
                if counts[k + 1] < counts[k - 1] {
                    [Some(r), Some(l)]
                } else {
                    [Some(l), Some(r)]
                }
            }
            (l, r) => [l.or(r), None],
        };
        order.into_iter().flatten().find(|&i| allowed(i))
    };
    let smallest = (0..n).min_by_key(|&k| (counts[k], k))?;
    if let Some(i) = try_bin(smallest) {
        return Some(i);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&k| (counts[k], k));
    order.into_iter().skip(1).find_map(try_bin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_distinct_values_keep_their_own_bins() {
        let obs: Vec<f64> = (0..20).flat_map(|i| vec![1.0 + 0.5 * i as f64; 3]).collect();
        let b = HenBinning::build(&obs, 20, BinCaps::default()).unwrap();
        assert_eq!(b.n_bins(), 20);
        assert!(b.counts.iter().all(|&c| c == 3));
        for (i, w) in b.edges.windows(2).enumerate() {
            let v = 1.0 + 0.5 * i as f64;
            assert!(w[0] < v && v < w[1]);
        }
    }

    #[test]
    fn too_few_values_is_an_error() {
        assert!(HenBinning::build(&[1.0, 2.0, 2.0], 20, BinCaps::default()).is_err());
    }

    #[test]
    fn caps_hold_on_dense_data() {
        let obs: Vec<f64> = (0..3000).map(|i| 0.01 * i as f64 + 0.3 * ((i * 7919) % 13) as f64).collect();
        let b = HenBinning::build(&obs, 20, BinCaps::default()).unwrap();
        let w = b.widths();
        assert_eq!(w.len(), 20);
        assert!(w[0] <= 2.0 && w[19] <= 7.0);
        assert!(w[1..19].iter().all(|&v| v <= 5.0));
        assert_eq!(b.counts.iter().sum::<usize>(), 3000);
    }
}
