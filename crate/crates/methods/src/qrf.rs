//! Quantile regression forests with out-of-bag permutation importance.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use gustpp_core::distributions::{PiecewiseLinearQuantile, ProbForecast};
use gustpp_core::scoring::evaluation_levels;
use gustpp_core::{Dataset, Error, ForecastCase, Forecaster, ProbForecastF64, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::local::{local_groups, mean_feature_columns, LocalKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QrfConfig {
    pub n_trees: usize,
    /// Share of predictors tried at each split.
    pub mtry_ratio: f64,
    pub min_node_size: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for QrfConfig {
    fn default() -> Self {
        Self { n_trees: 1000, mtry_ratio: 0.5, min_node_size: 5, max_depth: 20, seed: 1 }
    }
}

impl QrfConfig {
    pub fn mtry(&self, p: usize) -> usize {
        ((self.mtry_ratio * p as f64).ceil() as usize).clamp(1, p.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    /// Range into the tree's in-bag sample list.
    Leaf { start: u32, len: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Bootstrap sample (with repeats) ordered by leaf.
    pub samples: Vec<u32>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> (usize, usize) {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Split { feature, threshold, left, right } => {
                    k = if x[*feature as usize] <= *threshold { *left } else { *right } as usize;
                }
                Node::Leaf { start, len } => return (*start as usize, *len as usize),
            }
        }
    }

    /// Training rows not drawn into the bootstrap sample.
    pub fn oob(&self, n: usize) -> Vec<usize> {
        let mut seen = vec![false; n];
        for &i in &self.samples {
            seen[i as usize] = true;
        }
        (0..n).filter(|&i| !seen[i]).collect()
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], k: usize) -> usize {
            match &nodes[k] {
                Node::Split { left, right, .. } => 1 + rec(nodes, *left as usize).max(rec(nodes, *right as usize)),
                Node::Leaf { .. } => 0,
            }
        }
        rec(&self.nodes, 0)
    }
}

/// Trees plus the training responses their leaves index into.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub y: Vec<f64>,
    pub trees: Vec<Tree>,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a QrfConfig,
    mtry: usize,
}

impl Grower<'_> {
    fn grow(&self, rng: &mut ChaCha8Rng) -> Tree {
        let n = self.y.len();
        let mut samples: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
        let mut nodes = vec![Node::Leaf { start: 0, len: n as u32 }];
        let mut stack = vec![(0usize, 0usize, n, 0usize)];
        let p = self.x.first().map_or(0, Vec::len);
        let mut buf: Vec<(f64, f64)> = Vec::with_capacity(n);
        while let Some((node, start, len, depth)) = stack.pop() {
            let slice = &mut samples[start..start + len];
            let split = if depth < self.cfg.max_depth && len >= 2 * self.cfg.min_node_size {
                let mut feats = rand::seq::index::sample(rng, p, self.mtry).into_vec();
                feats.sort_unstable();
                self.best_split(slice, &feats, &mut buf)
            } else {
                None
            };
            let Some((feature, threshold)) = split else {
                nodes[node] = Node::Leaf { start: start as u32, len: len as u32 };
                continue;
            };
            let mut k = 0;
            for i in 0..len {
                if self.x[slice[i] as usize][feature] <= threshold {
                    slice.swap(i, k);
                    k += 1;
                }
            }
            let left = nodes.len();
            nodes.push(Node::Leaf { start: start as u32, len: k as u32 });
            nodes.push(Node::Leaf { start: (start + k) as u32, len: (len - k) as u32 });
            nodes[node] = Node::Split { feature: feature as u32, threshold, left: left as u32, right: left as u32 + 1 };
            stack.push((left + 1, start + k, len - k, depth + 1));
            stack.push((left, start, k, depth + 1));
        }
        Tree { nodes, samples }
    }

    /// Largest variance reduction over the candidate predictors; ties keep
    /// the lowest predictor index, then the lowest threshold.
    fn best_split(&self, slice: &[u32], feats: &[usize], buf: &mut Vec<(f64, f64)>) -> Option<(usize, f64)> {
        let m = slice.len();
        let min = self.cfg.min_node_size;
        let total: f64 = slice.iter().map(|&i| self.y[i as usize]).sum();
        let base = total * total / m as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in feats {
            buf.clear();
            buf.extend(slice.iter().map(|&i| (self.x[i as usize][f], self.y[i as usize])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for k in 1..m {
                left += buf[k - 1].1;
                if k < min || m - k < min || buf[k - 1].0 >= buf[k].0 {
                    continue;
                }
                let right = total - left;
                let gain = left * left / k as f64 + right * right / (m - k) as f64 - base;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    let (a, b) = (buf[k - 1].0, buf[k].0);
                    let mid = 0.5 * (a + b);
                    best = Some((gain, f, if mid < b { mid } else { a }));
                }
            }
        }
        let tol = 1e-12 * base.abs().max(1.0);
        best.filter(|(g, _, _)| *g > tol).map(|(_, f, t)| (f, t))
    }
}

/// Grows `cfg.n_trees` trees; tree `t` draws from stream `stream_base + t`.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], cfg: &QrfConfig, stream_base: u64) -> Result<Forest> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::Config(format!("QRF: {} feature rows for {n} observations", x.len())));
    }
    if n < 2 * cfg.min_node_size {
        return Err(Error::Config(format!(
            "QRF needs at least {} training cases, got {n}",
            2 * cfg.min_node_size
        )));
    }
    if n > u32::MAX as usize {
        return Err(Error::Config("QRF training set too large".into()));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(Error::Config("QRF feature rows must be non-empty and of equal length".into()));
    }
    let grower = Grower { x, y, cfg, mtry: cfg.mtry(p) };
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream_base.wrapping_add(t as u64));
            grower.grow(&mut rng)
        })
        .collect();
    Ok(Forest { n_features: p, y: y.to_vec(), trees })
}

impl Forest {
    /// Meinshausen weights of the training responses, as sparse
    /// `(index, weight)` pairs.
    pub fn weights(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut w = vec![0.0; self.y.len()];
        let per_tree = 1.0 / self.trees.len() as f64;
        for t in &self.trees {
            let (start, len) = t.leaf(x);
            let v = per_tree / len as f64;
            for &i in &t.samples[start..start + len] {
                w[i as usize] += v;
            }
        }
        w.into_iter().enumerate().filter(|(_, v)| *v > 0.0).collect()
    }

    /// Lower weighted empirical quantiles at `levels`.
    pub fn quantiles(&self, x: &[f64], levels: &[f64]) -> Vec<f64> {
        let mut pts: Vec<(f64, f64)> = self.weights(x).into_iter().map(|(i, w)| (self.y[i], w)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(levels.len());
        let mut k = 0;
        let mut cum = pts[0].1 / total;
        for &tau in levels {
            while cum < tau - 1e-12 && k + 1 < pts.len() {
                k += 1;
                cum += pts[k].1 / total;
            }
            out.push(pts[k].0);
        }
        out
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.weights(x).into_iter().map(|(i, w)| w * self.y[i]).sum()
    }

    /// Knots at 0, the evaluation levels and 1, spanning the weighted support.
    pub fn predict(&self, x: &[f64]) -> Result<PiecewiseLinearQuantile<f64>> {
        let mut levels = vec![0.0];
        levels.extend(evaluation_levels::<f64>());
        levels.push(1.0);
        let values = self.quantiles(x, &levels);
        PiecewiseLinearQuantile::new(levels, values)
    }

    /// Increase of per-tree out-of-bag MSE of the leaf mean after permuting
    /// each feature among that tree's OOB rows, averaged over trees.
    pub fn oob_importance(&self, x: &[Vec<f64>], seed: u64) -> Result<OobImportance> {
        if x.len() != self.y.len() {
            return Err(Error::Config("OOB importance needs the training features".into()));
        }
        let p = self.n_features;
        let per_tree: Vec<Option<(f64, Vec<f64>)>> = self
            .trees
            .par_iter()
            .enumerate()
            .map(|(t, tree)| {
                let oob = tree.oob(self.y.len());
                if oob.is_empty() {
                    return None;
                }
                let leaf_mean = |row: &[f64]| {
                    let (s, l) = tree.leaf(row);
                    tree.samples[s..s + l].iter().map(|&i| self.y[i as usize]).sum::<f64>() / l as f64
                };
                let mse = |rows: &mut dyn Iterator<Item = (Vec<f64>, f64)>| {
                    let (mut s, mut c) = (0.0, 0.0);
                    for (r, y) in rows {
                        s += (leaf_mean(&r) - y).powi(2);
                        c += 1.0;
                    }
                    s / c
                };
                let base = mse(&mut oob.iter().map(|&i| (x[i].clone(), self.y[i])));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let deltas = (0..p)
                    .map(|j| {
                        let mut perm = oob.clone();
                        perm.shuffle(&mut rng);
                        let permuted = mse(&mut oob.iter().zip(&perm).map(|(&i, &k)| {
                            let mut r = x[i].clone();
                            r[j] = x[k][j];
                            (r, self.y[i])
                        }));
                        permuted - base
                    })
                    .collect();
                Some((base, deltas))
            })
            .collect();
        let used: Vec<&(f64, Vec<f64>)> = per_tree.iter().flatten().collect();
        if used.is_empty() {
            return Err(Error::Config("no out-of-bag rows in any tree".into()));
        }
        let m = used.len() as f64;
        let baseline = used.iter().map(|u| u.0).sum::<f64>() / m;
        let mut delta = vec![0.0; p];
        let mut delta_sd = vec![0.0; p];
        for j in 0..p {
            let d: Vec<f64> = used.iter().map(|u| u.1[j]).collect();
            delta[j] = d.iter().sum::<f64>() / m;
            let var = d.iter().map(|v| (v - delta[j]).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            delta_sd[j] = (var / m).sqrt();
        }
        Ok(OobImportance { baseline_mse: baseline, delta, delta_sd, n_trees: used.len() })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &ForestHeader { n_features: self.n_features, y: &self.y })?;
        writeln!(w).map_err(io_err)?;
        for t in &self.trees {
            serde_json::to_writer(&mut w, t)?;
            writeln!(w).map_err(io_err)?;
        }
        Ok(())
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Json(serde_json::Error::io(e))
}

#[derive(Serialize)]
struct ForestHeader<'a> {
    n_features: usize,
    y: &'a [f64],
}

#[derive(Deserialize)]
struct ForestHeaderOwned {
    n_features: usize,
    y: Vec<f64>,
}

/// Per-feature OOB importance of one forest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OobImportance {
    pub baseline_mse: f64,
    pub delta: Vec<f64>,
    /// Monte-Carlo standard error of `delta` across trees.
    pub delta_sd: Vec<f64>,
    pub n_trees: usize,
}

/// Local forests keyed by station and lead time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QrfModel {
    pub predictor_names: Vec<String>,
    /// Predictor positions fed to the trees.
    pub features: Vec<usize>,
    pub forests: BTreeMap<LocalKey, Forest>,
}

/// Aggregated importance row for one predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrfImportance {
    pub predictor: String,
    pub delta: f64,
    /// `delta` over the baseline OOB MSE.
    pub relative: f64,
    pub delta_sd: f64,
}

fn stream_base(key: &LocalKey) -> u64 {
    ((key.station as u64) << 42) ^ ((key.lead as u64) << 32)
}

impl QrfModel {
    pub fn fit(train: &Dataset, cfg: &QrfConfig) -> Result<Self> {
        let features = mean_feature_columns(&train.predictor_names);
        let groups: Vec<(LocalKey, Vec<&ForecastCase>)> = local_groups(train).into_iter().collect();
        let forests = groups
            .par_iter()
            .map(|(key, cases)| {
                let (x, y) = design(cases, &features)?;
                let f = fit_forest(&x, &y, cfg, stream_base(key)).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("station {} lead {}: {m}", key.station, key.lead)),
                    other => other,
                })?;
                Ok((*key, f))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { predictor_names: train.predictor_names.clone(), features, forests })
    }

    fn forest(&self, case: &ForecastCase) -> Result<&Forest> {
        self.forests.get(&LocalKey::of(case)).ok_or_else(|| {
            Error::MissingKey(format!("QRF model for station {} lead {}", case.station_id, case.lead_time_h))
        })
    }

    pub fn row(&self, case: &ForecastCase) -> Result<Vec<f64>> {
        self.features
            .iter()
            .map(|&j| {
                case.predictors.get(j).copied().ok_or_else(|| {
                    Error::MissingKey(format!("predictor `{}`", self.predictor_names[j]))
                })
            })
            .collect()
    }

    /// OOB importance per predictor, averaged over the local forests.
    pub fn oob_importance(&self, train: &Dataset, seed: u64) -> Result<Vec<QrfImportance>> {
        let groups = local_groups(train);
        let p = self.features.len();
        let mut delta = vec![0.0; p];
        let mut var = vec![0.0; p];
        let mut base = 0.0;
        for (key, forest) in &self.forests {
            let cases = groups.get(key).ok_or_else(|| {
                Error::MissingKey(format!("training cases for station {} lead {}", key.station, key.lead))
            })?;
            let (x, _) = design(cases, &self.features)?;
            let imp = forest.oob_importance(&x, seed)?;
            base += imp.baseline_mse;
            for j in 0..p {
                delta[j] += imp.delta[j];
                var[j] += imp.delta_sd[j].powi(2);
            }
        }
        let k = self.forests.len().max(1) as f64;
        let base = base / k;
        let mut out: Vec<QrfImportance> = (0..p)
            .map(|j| QrfImportance {
                predictor: self.predictor_names[self.features[j]].clone(),
                delta: delta[j] / k,
                relative: delta[j] / k / base,
                delta_sd: var[j].sqrt() / k,
            })
            .collect();
        out.sort_by(|a, b| b.delta.total_cmp(&a.delta).then_with(|| a.predictor.cmp(&b.predictor)));
        Ok(out)
    }

    /// Header line, then per key a key line followed by its forest.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({
            "method": "qrf",
            "predictors": self.predictor_names,
            "features": self.features,
            "keys": self.forests.iter().map(|(k, f)| serde_json::json!({
                "station": k.station, "lead": k.lead, "n_trees": f.trees.len()
            })).collect::<Vec<_>>(),
        });
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w).map_err(io_err)?;
        for f in self.forests.values() {
            f.write_jsonl(&mut w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Config("truncated QRF model file".into()))?
                .map_err(io_err)
        };
        #[derive(Deserialize)]
        struct KeyLine {
            station: u32,
            lead: u32,
            n_trees: usize,
        }
        #[derive(Deserialize)]
        struct Header {
            method: String,
            predictors: Vec<String>,
            features: Vec<usize>,
            keys: Vec<KeyLine>,
        }
        let h: Header = serde_json::from_str(&next()?)?;
        if h.method != "qrf" {
            return Err(Error::Config(format!("expected a qrf model, found `{}`", h.method)));
        }
        let mut forests = BTreeMap::new();
        for k in h.keys {
            let head: ForestHeaderOwned = serde_json::from_str(&next()?)?;
            let trees = (0..k.n_trees).map(|_| Ok(serde_json::from_str(&next()?)?)).collect::<Result<_>>()?;
            forests.insert(
                LocalKey { station: k.station, lead: k.lead },
                Forest { n_features: head.n_features, y: head.y, trees },
            );
        }
        Ok(Self { predictor_names: h.predictors, features: h.features, forests })
    }
}

fn design(cases: &[&ForecastCase], features: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let x = cases.iter().map(|c| features.iter().map(|&j| c.predictors[j]).collect()).collect();
    let y = cases.iter().map(|c| c.require_observation()).collect::<Result<_>>()?;
    Ok((x, y))
}

impl Forecaster for QrfModel {
    fn method(&self) -> &'static str {
        "qrf"
    }

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64> {
        let f = self.forest(case)?;
        f.predict(&self.row(case)?).map(ProbForecast::PiecewiseLinear)
    }
}
