//! Locally adaptive joint networks: one network ensemble per lead time,
//! shared across stations through a learned station embedding.

pub mod binning;
pub mod heads;
pub mod network;
pub mod train;

use std::collections::BTreeMap;

use gustpp_core::distributions::{params_average, vincentize, vincentize_bernstein, ProbForecast};
use gustpp_core::{Dataset, Error, ForecastCase, Forecaster, ProbForecastF64, Result, Standardizer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use binning::{BinCaps, HenBinning};
pub use heads::{Head, HeadKind};
pub use network::{Architecture, Network, NetworkJson};
pub use train::{EpochLog, Sample, TrainSettings};

use crate::local::mean_feature_columns;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnConfig {
    pub embedding_dim: usize,
    pub hidden_drn: Vec<usize>,
    pub hidden_bqn: Vec<usize>,
    pub hidden_hen: Vec<usize>,
    pub bqn_degree: usize,
    pub hen_bins: usize,
    pub hen_caps: BinCaps,
    pub train: TrainSettings,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 10,
            hidden_drn: vec![64, 32],
            hidden_bqn: vec![48, 24],
            hidden_hen: vec![64, 32],
            bqn_degree: 12,
            hen_bins: 20,
            hen_caps: BinCaps::default(),
            train: TrainSettings::default(),
            ensemble_size: 10,
            seed: 1,
        }
    }
}

impl NnConfig {
    pub fn hidden(&self, head: HeadKind) -> &[usize] {
        match head {
            HeadKind::Drn => &self.hidden_drn,
            HeadKind::Bqn => &self.hidden_bqn,
            HeadKind::Hen => &self.hidden_hen,
        }
    }
}

/// Network inputs for one case before standardization: the mean-type
/// predictors, followed for BQN by the sorted members.
pub fn raw_inputs(head: HeadKind, columns: &[usize], case: &ForecastCase) -> Vec<f64> {
    let mut x: Vec<f64> = columns.iter().map(|&j| case.predictors[j]).collect();
    if head == HeadKind::Bqn {
        let mut m = case.ensemble.clone();
        m.sort_by(f64::total_cmp);
        x.extend(m);
    }
    x
}

fn input_names(head: HeadKind, names: &[String], columns: &[usize], n_members: usize) -> Vec<String> {
    let mut out: Vec<String> = columns.iter().map(|&j| names[j].clone()).collect();
    if head == HeadKind::Bqn {
        out.extend((1..=n_members).map(|k| format!("member_{k}")));
    }
    out
}

/// Everything needed to predict at one lead time.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadNetworks {
    pub standardizer: Standardizer,
    pub stations: Vec<u32>,
    pub head: Head,
    pub members: Vec<Network>,
    pub logs: Vec<Vec<EpochLog>>,
}

impl LeadNetworks {
    fn station_index(&self, id: u32) -> Result<usize> {
        self.stations
            .binary_search(&id)
            .map_err(|_| Error::MissingKey(format!("station {id} has no embedding")))
    }

    pub fn member_forecasts(&self, x: &[f64], station: usize) -> Result<Vec<ProbForecastF64>> {
        let mut cache = network::Cache::default();
        self.members
            .iter()
            .map(|net| {
                net.forward(x, station, &mut cache);
                self.head.forecast(&cache.output)
            })
            .collect()
    }
}

/// Combines member forecasts: parameter averaging for DRN, coefficient
/// averaging for BQN and quantile averaging for HEN.
pub fn aggregate(kind: HeadKind, members: &[ProbForecastF64]) -> Result<ProbForecastF64> {
    match kind {
        HeadKind::Drn => {
            let params = members
                .iter()
                .map(|m| match m {
                    ProbForecast::TruncatedLogistic(d) => Ok((d.mu, d.sigma)),
                    other => Err(Error::Domain(format!("DRN member is a {} forecast", other.kind()))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProbForecast::TruncatedLogistic(params_average(&params)?))
        }
        HeadKind::Bqn => {
            let qs = members
                .iter()
                .map(|m| match m {
                    ProbForecast::Bernstein(b) => Ok(b.clone()),
                    other => Err(Error::Domain(format!("BQN member is a {} forecast", other.kind()))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProbForecast::Bernstein(vincentize_bernstein(&qs)?))
        }
        HeadKind::Hen => vincentize(members),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnModel {
    pub head: HeadKind,
    pub predictor_names: Vec<String>,
    pub columns: Vec<usize>,
    pub leads: BTreeMap<u32, LeadNetworks>,
}

fn samples(
    head: HeadKind,
    columns: &[usize],
    std: &Standardizer,
    stations: &[u32],
    cases: &[&ForecastCase],
) -> Result<Vec<Sample>> {
    cases
        .iter()
        .filter(|c| c.observation.is_some())
        .map(|c| {
            let station = stations
                .binary_search(&c.station_id)
                .map_err(|_| Error::MissingKey(format!("station {} has no embedding", c.station_id)))?;
            Ok(Sample { x: std.apply(&raw_inputs(head, columns, c)), station, y: c.require_observation()? })
        })
        .collect()
}

impl NnModel {
    /// Fits one ensemble per lead time; `validation` drives early stopping.
    pub fn fit(head: HeadKind, train: &Dataset, validation: &Dataset, cfg: &NnConfig) -> Result<Self> {
        if cfg.ensemble_size == 0 {
            return Err(Error::Config("network ensemble size must be positive".into()));
        }
        let columns = mean_feature_columns(&train.predictor_names);
        let stations = train.stations();
        let mut leads = BTreeMap::new();
        for lead in train.lead_times() {
            let tr: Vec<&ForecastCase> =
                train.cases.iter().filter(|c| c.lead_time_h == lead && c.observation.is_some()).collect();
            let va: Vec<&ForecastCase> = validation
                .cases
                .iter()
                .filter(|c| c.lead_time_h == lead && c.observation.is_some())
                .collect();
            if va.is_empty() {
                return Err(Error::Config(format!("lead {lead}: no validation cases for early stopping")));
            }
            let n_members = tr[0].ensemble.len();
            let names = input_names(head, &train.predictor_names, &columns, n_members);
            let rows: Vec<Vec<f64>> = tr.iter().map(|c| raw_inputs(head, &columns, c)).collect();
            let standardizer = Standardizer::fit(&names, &rows)?;
            let train_s = samples(head, &columns, &standardizer, &stations, &tr)?;
            let val_s = samples(head, &columns, &standardizer, &stations, &va)?;
            let head_spec = match head {
                HeadKind::Drn => Head::Drn,
                HeadKind::Bqn => Head::bqn(cfg.bqn_degree),
                HeadKind::Hen => {
                    let y: Vec<f64> = train_s.iter().map(|s| s.y).collect();
                    let b = HenBinning::build(&y, cfg.hen_bins, cfg.hen_caps)?;
                    Head::Hen { edges: b.edges }
                }
            };
            let arch = Architecture {
                n_inputs: standardizer.n_features(),
                n_stations: stations.len(),
                embedding_dim: cfg.embedding_dim,
                hidden: cfg.hidden(head).to_vec(),
                n_outputs: head_spec.n_outputs(),
            };
            let trained = (0..cfg.ensemble_size)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(((lead as u64) << 16) | k as u64);
                    train::train_network(&arch, &head_spec, &train_s, &val_s, &cfg.train, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            for (k, t) in trained.iter().enumerate() {
                log::info!(
                    "{} lead {lead} member {k}: best epoch {} of {}, {} batches skipped",
                    head.name(),
                    t.best_epoch,
                    t.log.len(),
                    t.skipped_batches
                );
            }
            let (members, logs) = trained.into_iter().map(|t| (t.network, t.log)).unzip();
            leads.insert(
                lead,
                LeadNetworks { standardizer, stations: stations.clone(), head: head_spec, members, logs },
            );
        }
        Ok(Self { head, predictor_names: train.predictor_names.clone(), columns, leads })
    }

    pub fn lead(&self, lead: u32) -> Result<&LeadNetworks> {
        self.leads
            .get(&lead)
            .ok_or_else(|| Error::MissingKey(format!("{} networks for lead {lead}", self.head.name())))
    }

    pub fn member_forecasts(&self, case: &ForecastCase) -> Result<Vec<ProbForecastF64>> {
        let l = self.lead(case.lead_time_h)?;
        if case.predictors.len() != self.predictor_names.len() {
            return Err(Error::MissingKey(format!(
                "predictor `{}`",
                self.predictor_names.get(case.predictors.len()).cloned().unwrap_or_default()
            )));
        }
        let station = l.station_index(case.station_id)?;
        let x = l.standardizer.apply(&raw_inputs(self.head, &self.columns, case));
        l.member_forecasts(&x, station)
    }

    pub fn to_json(&self) -> NnJson {
        NnJson {
            version: NN_JSON_VERSION,
            method: self.head,
            predictors: self.predictor_names.clone(),
            columns: self.columns.clone(),
            leads: self
                .leads
                .iter()
                .map(|(&lead, l)| LeadJson {
                    lead,
                    standardizer: l.standardizer.clone(),
                    stations: l.stations.clone(),
                    bqn_degree: match &l.head {
                        Head::Bqn { degree, .. } => Some(*degree),
                        _ => None,
                    },
                    hen_edges: match &l.head {
                        Head::Hen { edges } => Some(edges.clone()),
                        _ => None,
                    },
                    members: l.members.iter().map(Network::to_matrices).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(j: NnJson) -> Result<Self> {
        if j.version != NN_JSON_VERSION {
            return Err(Error::Config(format!("unsupported network file version {}", j.version)));
        }
        let mut leads = BTreeMap::new();
        for l in j.leads {
            let head = match j.method {
                HeadKind::Drn => Head::Drn,
                HeadKind::Bqn => Head::bqn(l.bqn_degree.unwrap_or(12)),
                HeadKind::Hen => Head::Hen {
                    edges: l.hen_edges.ok_or_else(|| Error::Config("HEN model without bin edges".into()))?,
                },
            };
            let members = l
                .members
                .iter()
                .map(|m| Network::from_matrices(m).map_err(Error::Config))
                .collect::<Result<Vec<_>>>()?;
            if members.iter().any(|m| m.arch.n_outputs != head.n_outputs()) {
                return Err(Error::Config(format!("lead {}: network outputs do not match the head", l.lead)));
            }
            let logs = vec![Vec::new(); members.len()];
            leads.insert(l.lead, LeadNetworks { standardizer: l.standardizer, stations: l.stations, head, members, logs });
        }
        Ok(Self { head: j.method, predictor_names: j.predictors, columns: j.columns, leads })
    }
}

pub const NN_JSON_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadJson {
    pub lead: u32,
    pub standardizer: Standardizer,
    pub stations: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bqn_degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hen_edges: Option<Vec<f64>>,
    pub members: Vec<NetworkJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnJson {
    pub version: u32,
    pub method: HeadKind,
    pub predictors: Vec<String>,
    pub columns: Vec<usize>,
    pub leads: Vec<LeadJson>,
}

impl Forecaster for NnModel {
    fn method(&self) -> &'static str {
        self.head.name()
    }

    fn predict(&self, case: &ForecastCase) -> Result<ProbForecastF64> {
        aggregate(self.head, &self.member_forecasts(case)?)
    }
}
