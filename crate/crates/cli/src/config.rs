use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gustpp_core::ScenarioConfig;
use gustpp_methods::{EmosConfig, GbmConfig, HeadKind, IdrConfig, MbmConfig, NnConfig, QrfConfig};
use serde::{Deserialize, Serialize};

/// Bad flags, config files or method names. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Epc,
    Raw,
    Emos,
    Mbm,
    Idr,
    EmosGb,
    Qrf,
    Drn,
    Bqn,
    Hen,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Epc,
        Method::Raw,
        Method::Emos,
        Method::Mbm,
        Method::Idr,
        Method::EmosGb,
        Method::Qrf,
        Method::Drn,
        Method::Bqn,
        Method::Hen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Epc => "epc",
            Method::Raw => "raw",
            Method::Emos => "emos",
            Method::Mbm => "mbm",
            Method::Idr => "idr",
            Method::EmosGb => "emos-gb",
            Method::Qrf => "qrf",
            Method::Drn => "drn",
            Method::Bqn => "bqn",
            Method::Hen => "hen",
        }
    }

    pub fn head(self) -> Option<HeadKind> {
        match self {
            Method::Drn => Some(HeadKind::Drn),
            Method::Bqn => Some(HeadKind::Bqn),
            Method::Hen => Some(HeadKind::Hen),
            _ => None,
        }
    }

    /// Uses predictors beyond the gust ensemble.
    pub fn uses_predictors(self) -> bool {
        matches!(self, Method::EmosGb | Method::Qrf | Method::Drn | Method::Bqn | Method::Hen)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        let s = s.trim().to_ascii_lowercase();
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            UsageError(format!("unknown method `{s}`; expected one of {}", known.join(", ")))
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>, UsageError> {
    let mut out: Vec<Method> = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(UsageError("no methods selected".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Synthetic scenario for `generate`.
    pub scenario: ScenarioConfig,
    /// Case CSV; defaults to the generated `data/cases.csv` under `out`.
    pub data: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    /// Overrides every component seed when set.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub emos: EmosConfig,
    pub mbm: MbmConfig,
    pub idr: IdrConfig,
    pub emos_gb: GbmConfig,
    pub qrf: QrfConfig,
    pub nn: NnConfig,
    /// Significance level for the DM tests after BH correction.
    pub alpha: f64,
    pub importance_repeats: usize,
    pub brier_thresholds: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            data: None,
            methods: Method::ALL.to_vec(),
            out: PathBuf::from("out"),
            seed: None,
            jobs: 0,
            emos: EmosConfig::default(),
            mbm: MbmConfig::default(),
            idr: IdrConfig::default(),
            emos_gb: GbmConfig::default(),
            qrf: QrfConfig::default(),
            nn: NnConfig::default(),
            alpha: 0.05,
            importance_repeats: 10,
            brier_thresholds: vec![5.0, 10.0, 15.0, 20.0],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    /// Pushes the global seed into every component.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.scenario.rng_seed = s;
            self.idr.seed = s;
            self.qrf.seed = s;
            self.nn.seed = s;
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if self.methods.is_empty() {
            return Err(UsageError("no methods selected".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(UsageError(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("data").join("cases.csv"))
    }
}
