//! Calibration diagnostics, Diebold-Mariano tests, false discovery rate
//! control and permutation importance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::dataset::ForecastCase;
use crate::distributions::ProbForecast;
use crate::error::{domain, Error, Result};

/// Unified PIT: `F(y)` for continuous forecasts, uniform on `[F(y-), F(y)]`
/// where the CDF jumps at `y`.
pub fn pit<R: Rng + ?Sized>(forecast: &ProbForecast<f64>, y: f64, rng: &mut R) -> f64 {
    let hi = forecast.cdf(y);
    let lo = forecast.cdf_left(y).min(hi);
    if hi - lo <= 1e-12 {
        hi
    } else {
        lo + (hi - lo) * rng.gen::<f64>()
    }
}

/// Rank of `y` among the members, 1-based in `1..=m+1`, ties broken at random.
pub fn ensemble_rank<R: Rng + ?Sized>(members: &[f64], y: f64, rng: &mut R) -> usize {
    let below = members.iter().filter(|&&x| x < y).count();
    let ties = members.iter().filter(|&&x| x == y).count();
    1 + below + if ties > 0 { rng.gen_range(0..=ties) } else { 0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramDiag {
    pub counts: Vec<usize>,
    /// Pearson statistic against uniform bin probabilities.
    pub chi2: f64,
    pub p_value: f64,
    pub coverage: Option<f64>,
    pub mean_pi_length: Option<f64>,
}

impl HistogramDiag {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let n: usize = counts.iter().sum();
        let k = counts.len();
        let expected = n as f64 / k as f64;
        let chi2 = if n == 0 {
            0.0
        } else {
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
        };
        let p_value = if k > 1 && n > 0 {
            1.0 - ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom").cdf(chi2)
        } else {
            1.0
        };
        Self { counts, chi2, p_value, coverage: None, mean_pi_length: None }
    }

    /// Bins `[0,1]` into `n_bins` equal cells; 1.0 lands in the last cell.
    pub fn from_pit(values: &[f64], n_bins: usize) -> Self {
        let mut counts = vec![0; n_bins];
        for &u in values {
            let b = ((u.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
            counts[b] += 1;
        }
        Self::from_counts(counts)
    }

    /// Ranks in `1..=n_ranks`.
    pub fn from_ranks(ranks: &[usize], n_ranks: usize) -> Self {
        let mut counts = vec![0; n_ranks];
        for &r in ranks {
            counts[r.clamp(1, n_ranks) - 1] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn with_intervals(mut self, covered: &[bool], lengths: &[f64]) -> Self {
        if !covered.is_empty() {
            self.coverage = Some(covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64);
        }
        if !lengths.is_empty() {
            self.mean_pi_length = Some(lengths.iter().sum::<f64>() / lengths.len() as f64);
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Favored {
    A,
    B,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub n: usize,
    pub statistic: f64,
    pub p_two_sided: f64,
    /// Alternative: method A has the lower expected score.
    pub p_a_better: f64,
    /// Alternative: method B has the lower expected score.
    pub p_b_better: f64,
}

impl DmResult {
    pub fn favored(&self) -> Favored {
        if self.statistic < 0.0 {
            Favored::A
        } else if self.statistic > 0.0 {
            Favored::B
        } else {
            Favored::Neither
        }
    }
}

/// Diebold-Mariano test on score differences `a - b` for negatively
/// oriented scores.
pub fn dm_test(scores_a: &[f64], scores_b: &[f64]) -> Result<DmResult> {
    if scores_a.len() != scores_b.len() {
        return Err(domain(format!("score sequences differ in length: {} vs {}", scores_a.len(), scores_b.len())));
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(domain("DM test needs at least two score pairs"));
    }
    let d: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let sigma = (d.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if sigma == 0.0 || !sigma.is_finite() {
        return Ok(DmResult { n, statistic: 0.0, p_two_sided: 1.0, p_a_better: 1.0, p_b_better: 1.0 });
    }
    let t = (n as f64).sqrt() * mean / sigma;
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(DmResult {
        n,
        statistic: t,
        p_two_sided: (2.0 * z.cdf(-t.abs())).min(1.0),
        p_a_better: z.cdf(t),
        p_b_better: z.cdf(-t),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub rejected: Vec<bool>,
    /// Largest p-value still rejected, if any.
    pub threshold: Option<f64>,
}

impl BhResult {
    pub fn n_rejected(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

/// Benjamini-Hochberg step-up procedure.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> BhResult {
    let m = p_values.len();
    let mut sorted: Vec<f64> = p_values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let threshold = (1..=m).rev().find(|&i| sorted[i - 1] <= alpha * i as f64 / m as f64).map(|i| sorted[i - 1]);
    let rejected = p_values.iter().map(|&p| threshold.is_some_and(|t| p <= t)).collect();
    BhResult { rejected, threshold }
}

pub fn skill_score(score: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 || !reference.is_finite() {
        return Err(domain("skill score undefined for a zero or non-finite reference score"));
    }
    Ok(1.0 - score / reference)
}

/// A permutable input: one predictor column, or the whole member vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Predictor(usize),
    Ensemble,
}

/// Resolves a column name, `"ensemble"` meaning the member vector.
pub fn resolve_feature(predictor_names: &[String], name: &str) -> Result<Feature> {
    if name == "ensemble" {
        return Ok(Feature::Ensemble);
    }
    predictor_names
        .iter()
        .position(|n| n == name)
        .map(Feature::Predictor)
        .ok_or_else(|| Error::MissingKey(format!("feature `{name}`")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceResult {
    pub feature: String,
    pub baseline: f64,
    /// Mean increase of the score under permutation.
    pub delta: f64,
    /// `delta / baseline`.
    pub relative: f64,
    /// Standard deviation of the increase across repeats.
    pub delta_sd: f64,
    pub n_repeats: usize,
}

/// Permutation importance of a feature set. All features in the set are
/// shuffled with the same permutation. `score` returns the mean score of a
/// method over the given cases.
pub fn permutation_importance<S>(
    label: &str,
    cases: &[ForecastCase],
    features: &[Feature],
    n_repeats: usize,
    seed: u64,
    score: S,
) -> Result<ImportanceResult>
where
    S: Fn(&[ForecastCase]) -> Result<f64>,
{
    if features.is_empty() {
        return Err(Error::MissingKey(format!("feature set `{label}` is empty")));
    }
    if let Some(first) = cases.first() {
        for f in features {
            if let Feature::Predictor(j) = *f {
                if j >= first.predictors.len() {
                    return Err(Error::MissingKey(format!("predictor index {j} in feature set `{label}`")));
                }
            }
        }
    }
    let baseline = score(cases)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..cases.len()).collect();
    let mut shuffled = cases.to_vec();
    let mut deltas = Vec::with_capacity(n_repeats);
    for _ in 0..n_repeats {
        perm.shuffle(&mut rng);
        for (dst, &src) in shuffled.iter_mut().zip(&perm) {
            for f in features {
                match *f {
                    Feature::Predictor(j) => dst.predictors[j] = cases[src].predictors[j],
                    Feature::Ensemble => dst.ensemble.clone_from(&cases[src].ensemble),
                }
            }
        }
        deltas.push(score(&shuffled)? - baseline);
    }
    let n = deltas.len().max(1) as f64;
    let delta = deltas.iter().sum::<f64>() / n;
    let delta_sd = if deltas.len() > 1 {
        (deltas.iter().map(|d| (d - delta).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ImportanceResult {
        feature: label.to_owned(),
        baseline,
        delta,
        relative: if baseline != 0.0 { delta / baseline } else { f64::NAN },
        delta_sd,
        n_repeats,
    })
}
