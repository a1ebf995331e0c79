//! Isotonic distributional regression under the empirical stochastic order
//! of sorted ensembles, with subsample aggregation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use gustpp_core::distributions::{ProbForecast, StepCdf};
use gustpp_core::{Dataset, Error, ForecastCase, Forecaster, ProbForecastF64, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::local::{local_groups, LocalKey};

/// Relation of `x` to `x'` in the componentwise order of sorted members.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdRelation {
    Less,
    Greater,
    Equal,
    Incomparable,
}

/// Compares two ensembles; both are sorted internally.
pub fn sd_compare(x: &[f64], x_prime: &[f64]) -> Result<SdRelation> {
    if x.len() != x_prime.len() {
        return Err(Error::Domain(format!("ensemble sizes differ: {} vs {}", x.len(), x_prime.len())));
    }
    let mut a = x.to_vec();
    let mut b = x_prime.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(compare_sorted(&a, &b))
}

fn compare_sorted(a: &[f64], b: &[f64]) -> SdRelation {
    let (mut le, mut ge) = (true, true);
    for (u, v) in a.iter().zip(b) {
        match u.partial_cmp(v) {
            Some(Ordering::Less) => ge = false,
            Some(Ordering::Greater) => le = false,
            _ => {}
        }
        if !le && !ge {
            return SdRelation::Incomparable;
        }
    }
    match (le, ge) {
        (true, true) => SdRelation::Equal,
        (true, false) => SdRelation::Less,
        (false, true) => SdRelation::Greater,
        _ => SdRelation::Incomparable,
    }
}

/// Dinic max-flow on integer capacities.
struct FlowGraph {
    head: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<i64>,
    next: Vec<usize>,
}

const NIL: usize = usize::MAX;

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self { head: vec![NIL; n], to: Vec::new(), cap: Vec::new(), next: Vec::new() }
    }

    fn add_edge(&mut self, u: usize, v: usize, c: i64) {
        for (a, b, cc) in [(u, v, c), (v, u, 0)] {
            self.to.push(b);
            self.cap.push(cc);
            self.next.push(self.head[a]);
            self.head[a] = self.to.len() - 1;
        }
    }

    fn levels(&self, s: usize) -> Vec<i32> {
        let mut level = vec![-1; self.head.len()];
        level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            let mut e = self.head[u];
            while e != NIL {
                if self.cap[e] > 0 && level[self.to[e]] < 0 {
                    level[self.to[e]] = level[u] + 1;
                    q.push_back(self.to[e]);
                }
                e = self.next[e];
            }
        }
        level
    }

    fn augment(&mut self, u: usize, t: usize, f: i64, level: &[i32], it: &mut [usize]) -> i64 {
        if u == t {
            return f;
        }
        while it[u] != NIL {
            let e = it[u];
            let v = self.to[e];
            if self.cap[e] > 0 && level[v] == level[u] + 1 {
                let d = self.augment(v, t, f.min(self.cap[e]), level, it);
                if d > 0 {
                    self.cap[e] -= d;
                    self.cap[e ^ 1] += d;
                    return d;
                }
            }
            it[u] = self.next[e];
        }
        0
    }

    /// Runs max-flow and returns the source side of a minimum cut.
    fn min_cut_source_side(&mut self, s: usize, t: usize) -> Vec<bool> {
        loop {
            let level = self.levels(s);
            if level[t] < 0 {
                return level.iter().map(|&l| l >= 0).collect();
            }
            let mut it = self.head.clone();
            while self.augment(s, t, i64::MAX, &level, &mut it) > 0 {}
        }
    }
}

/// Fitted conditional CDFs on the grid of unique training observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdrFit {
    /// Distinct sorted covariate vectors.
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<u32>,
    pub thresholds: Vec<f64>,
    /// `cdf[j][k]`: fitted CDF of point `j` at threshold `k`.
    pub cdf: Vec<Vec<f64>>,
    /// Pooled empirical CDF of the training observations.
    pub pooled: Vec<f64>,
}

impl IdrFit {
    /// Requires at least one observation; callers enforce larger minimums.
    pub fn fit(covariates: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if covariates.is_empty() || covariates.len() != y.len() {
            return Err(Error::Domain("IDR needs matching, non-empty covariates and observations".into()));
        }
        let mut sorted_cov: Vec<Vec<f64>> = covariates
            .iter()
            .map(|x| {
                let mut v = x.clone();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        // merge identical covariates
        let mut order: Vec<usize> = (0..sorted_cov.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(&sorted_cov[a], &sorted_cov[b]));
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for &i in &order {
            if points.last().is_some_and(|p| lex_cmp(p, &sorted_cov[i]) == Ordering::Equal) {
                members.last_mut().unwrap().push(i);
            } else {
                points.push(std::mem::take(&mut sorted_cov[i]));
                members.push(vec![i]);
            }
        }
        let weights: Vec<u32> = members.iter().map(|m| m.len() as u32).collect();
        let edges = reduced_edges(&points);
        let mut thresholds: Vec<f64> = y.to_vec();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let n_pts = points.len();
        let mut cdf = vec![vec![0.0; thresholds.len()]; n_pts];
        // per point: sorted member observations, so z at threshold t is a count
        let obs: Vec<Vec<f64>> = members
            .iter()
            .map(|m| {
                let mut v: Vec<f64> = m.iter().map(|&i| y[i]).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let mut z = vec![0.0; n_pts];
        for (k, &t) in thresholds.iter().enumerate() {
            for j in 0..n_pts {
                z[j] = obs[j].partition_point(|&v| v <= t) as f64 / weights[j] as f64;
            }
            let theta = isotonic_dag(&z, &weights, &edges);
            for j in 0..n_pts {
                cdf[j][k] = theta[j].clamp(0.0, 1.0);
            }
        }
        // guard monotonicity in the threshold against rounding
        for row in &mut cdf {
            for k in 1..row.len() {
                if row[k] < row[k - 1] {
                    row[k] = row[k - 1];
                }
            }
        }
        let n = y.len() as f64;
        let mut ys = y.to_vec();
        ys.sort_by(f64::total_cmp);
        let pooled = thresholds.iter().map(|&t| ys.partition_point(|&v| v <= t) as f64 / n).collect();
        Ok(Self { points, weights, thresholds, cdf, pooled })
    }

    /// Order bounds for a new covariate: the pointwise max of the CDFs of
    /// training points above it and the pointwise min of those below it. An
    /// exact match returns its own CDF as both bounds.
    pub fn bounds(&self, x: &[f64]) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let mut xs = x.to_vec();
        xs.sort_by(f64::total_cmp);
        let nt = self.thresholds.len();
        let mut lower: Option<Vec<f64>> = None;
        let mut upper: Option<Vec<f64>> = None;
        for (j, p) in self.points.iter().enumerate() {
            match compare_sorted(p, &xs) {
                SdRelation::Equal => return (Some(self.cdf[j].clone()), Some(self.cdf[j].clone())),
                SdRelation::Greater => {
                    let l = lower.get_or_insert_with(|| vec![0.0; nt]);
                    l.iter_mut().zip(&self.cdf[j]).for_each(|(a, &b)| *a = a.max(b));
                }
                SdRelation::Less => {
                    let u = upper.get_or_insert_with(|| vec![1.0; nt]);
                    u.iter_mut().zip(&self.cdf[j]).for_each(|(a, &b)| *a = a.min(b));
                }
                SdRelation::Incomparable => {}
            }
        }
        (lower, upper)
    }

    /// Both order bounds exist, so the prediction is their midpoint.
    pub fn is_two_sided(&self, x: &[f64]) -> bool {
        matches!(self.bounds(x), (Some(_), Some(_)))
    }

    /// CDF values on `self.thresholds` for a new covariate: the midpoint of
    /// the order bounds, the single available bound, or the pooled
    /// empirical CDF when `x` is incomparable to all training points.
    pub fn predict_cdf(&self, x: &[f64]) -> Vec<f64> {
        match self.bounds(x) {
            (Some(l), Some(u)) => l.iter().zip(&u).map(|(a, b)| 0.5 * (a + b)).collect(),
            (Some(l), None) => l,
            (None, Some(u)) => u,
            (None, None) => self.pooled.clone(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<StepCdf<f64>> {
        StepCdf::new(self.thresholds.clone(), self.predict_cdf(x))
    }
}

/// Exact weighted least-squares isotonic regression on a DAG by recursive
/// minimum-cut partitioning.
///
/// `edges` holds pairs `(a, b)` constraining `theta[a] <= theta[b]`. Each
/// target must be a proportion `z_j = count_j / w_j` with integer weight
/// `w_j`, which keeps all cut capacities integral and the solution exact.
pub fn isotonic_dag(z: &[f64], w: &[u32], edges: &[(usize, usize)]) -> Vec<f64> {
    let n = z.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        succ[a].push(b);
    }
    let counts: Vec<i64> = z.iter().zip(w).map(|(&zi, &wi)| (zi * wi as f64).round() as i64).collect();
    let mut theta = vec![0.0; n];
    let mut stack = vec![(0..n).collect::<Vec<usize>>()];
    let mut local = vec![NIL; n];
    while let Some(block) = stack.pop() {
        let sw: i64 = block.iter().map(|&i| w[i] as i64).sum();
        let sc: i64 = block.iter().map(|&i| counts[i]).sum();
        let mean = sc as f64 / sw as f64;
        let gains: Vec<i64> = block.iter().map(|&i| counts[i] * sw - w[i] as i64 * sc).collect();
        if block.len() == 1 || gains.iter().all(|&g| g == 0) {
            block.iter().for_each(|&i| theta[i] = mean);
            continue;
        }
        let (s, t) = (block.len(), block.len() + 1);
        for (li, &i) in block.iter().enumerate() {
            local[i] = li;
        }
        let mut g = FlowGraph::new(block.len() + 2);
        let inf = gains.iter().map(|v| v.abs()).sum::<i64>() + 1;
        for (li, &gain) in gains.iter().enumerate() {
            match gain.cmp(&0) {
                Ordering::Greater => g.add_edge(s, li, gain),
                Ordering::Less => g.add_edge(li, t, -gain),
                Ordering::Equal => {}
            }
        }
        for (li, &i) in block.iter().enumerate() {
            for &j in &succ[i] {
                if local[j] != NIL {
                    g.add_edge(li, local[j], inf);
                }
            }
        }
        let side = g.min_cut_source_side(s, t);
        for &i in &block {
            local[i] = NIL;
        }
        let value: i64 = (0..block.len()).filter(|&li| side[li]).map(|li| gains[li]).sum();
        let n_upper = (0..block.len()).filter(|&li| side[li]).count();
        if value <= 0 || n_upper == 0 || n_upper == block.len() {
            block.iter().for_each(|&i| theta[i] = mean);
            continue;
        }
        let (upper, lower): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
            block.iter().copied().enumerate().partition(|&(li, _)| side[li]);
        stack.push(upper.into_iter().map(|(_, i)| i).collect());
        stack.push(lower.into_iter().map(|(_, i)| i).collect());
    }
    theta
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (u, v) in a.iter().zip(b) {
        match u.total_cmp(v) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Constraint edges `(a, b)` meaning `F_a <= F_b`, i.e. point `b` is
/// dominated by point `a`; transitively reduced.
fn reduced_edges(points: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = points.len();
    // less[i][j]: points[j] strictly below points[i] in the order
    let words = n.div_ceil(64);
    let mut below = vec![vec![0u64; words]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && compare_sorted(&points[j], &points[i]) == SdRelation::Less {
                below[i][j / 64] |= 1 << (j % 64);
            }
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        // j is an immediate predecessor if no k with j < k < i
        let mut covered = vec![0u64; words];
        for k in 0..n {
            if below[i][k / 64] >> (k % 64) & 1 == 1 {
                for (c, b) in covered.iter_mut().zip(&below[k]) {
                    *c |= b;
                }
            }
        }
        for j in 0..n {
            let bit = 1u64 << (j % 64);
            if below[i][j / 64] & bit != 0 && covered[j / 64] & bit == 0 {
                // larger covariate i must have the smaller CDF
                edges.push((i, j));
            }
        }
    }
    edges
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdrConfig {
    pub n_subsamples: usize,
    pub subsample_ratio: f64,
    pub min_cases: usize,
    pub seed: u64,
}

impl Default for IdrConfig {
    fn default() -> Self {
        Self { n_subsamples: 100, subsample_ratio: 0.5, min_cases: 10, seed: 1 }
    }
}

/// Subsample-aggregated IDR for one station and lead time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdrEnsembleFit {
    pub members: Vec<IdrFit>,
}

impl IdrEnsembleFit {
    pub fn fit(covariates: &[Vec<f64>], y: &[f64], cfg: &IdrConfig, seed: u64) -> Result<Self> {
        let n = y.len();
        if n < cfg.min_cases {
            return Err(Error::Config(format!("IDR needs at least {} cases, got {n}", cfg.min_cases)));
        }
        let size = ((n as f64 * cfg.subsample_ratio).floor() as usize).max(1);
        let members = (0..cfg.n_subsamples)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let mut idx = sample(&mut rng, n, size).into_vec();
                idx.sort_unstable();
                let cov: Vec<Vec<f64>> = idx.iter().map(|&i| covariates[i].clone()).collect();
                let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                IdrFit::fit(&cov, &ys)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members })
    }

    pub fn is_two_sided(&self, x: &[f64]) -> bool {
        self.members.iter().all(|m| m.is_two_sided(x))
    }

    /// Pointwise mean of the member CDFs on the union of their grids.
    pub fn predict(&self, x: &[f64]) -> Result<StepCdf<f64>> {
        let mut grid: Vec<f64> = self.members.iter().flat_map(|m| m.thresholds.iter().copied()).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut acc = vec![0.0; grid.len()];
        for m in &self.members {
            let cdf = m.predict_cdf(x);
            for (a, &t) in acc.iter_mut().zip(&grid) {
                let k = m.thresholds.partition_point(|&v| v <= t);
                *a += if k == 0 { 0.0 } else { cdf[k - 1] };
            }
        }
        let nm = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= nm);
        for k in 1..acc.len() {
            if acc[k] < acc[k - 1] {
                acc[k] = acc[k - 1];
            }
        }
        StepCdf::new(grid, acc)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "IdrJson", into = "IdrJson")]
pub struct IdrModel {
    pub fits: BTreeMap<LocalKey, IdrEnsembleFit>,
}

#[derive(Serialize, Deserialize)]
struct IdrEntry {
    station: u32,
    lead: u32,
    fit: IdrEnsembleFit,
}

#[derive(Serialize, Deserialize)]
struct IdrJson {
    method: String,
    keys: Vec<IdrEntry>,
}

impl From<IdrModel> for IdrJson {
    fn from(m: IdrModel) -> Self {
        let keys = m.fits.into_iter().map(|(k, fit)| IdrEntry { station: k.station, lead: k.lead, fit }).collect();
        Self { method: "idr".into(), keys }
    }
}

impl From<IdrJson> for IdrModel {
    fn from(j: IdrJson) -> Self {
        Self { fits: j.keys.into_iter().map(|e| (LocalKey { station: e.station, lead: e.lead }, e.fit)).collect() }
    }
}

impl IdrModel {
    pub fn fit(train: &Dataset, cfg: &IdrConfig) -> Result<Self> {
        let groups: Vec<(LocalKey, Vec<&ForecastCase>)> = local_groups(train).into_iter().collect();
        let mut fits = BTreeMap::new();
        for (i, (key, cases)) in groups.iter().enumerate() {
            let cov: Vec<Vec<f64>> = cases.iter().map(|c| c.ensemble.clone()).collect();
            let y: Vec<f64> = cases.iter().map(|c| c.require_observation()).collect::<Result<_>>()?;
            let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            fits.insert(*key, IdrEnsembleFit::fit(&cov, &y, cfg, seed)?);
        }
        Ok(Self { fits })
    }
}

impl Forecaster for IdrModel {
    fn method(&self) -> &'static str {
        "idr"
    }

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64> {
        let fit = self.fits.get(&LocalKey::of(case)).ok_or_else(|| {
            Error::MissingKey(format!("IDR model for station {} lead {}", case.station_id, case.lead_time_h))
        })?;
        fit.predict(&case.ensemble).map(ProbForecast::StepCdf)
    }
}
