use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gustpp_core::{DataSplit, Forecaster};
use gustpp_methods::baselines::RawEnsemble;
use gustpp_methods::{EmosModel, EpcModel, GbmModel, IdrModel, MbmModel, NnModel, QrfModel};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{Method, RunConfig};

pub enum Fitted {
    Epc(EpcModel),
    Raw(RawEnsemble),
    Emos(EmosModel),
    Mbm(MbmModel),
    Idr(IdrModel),
    EmosGb(GbmModel),
    Qrf(QrfModel),
    Nn(NnModel),
}

impl Fitted {
    /// Classical methods use training and validation years together; the
    /// networks keep the validation year for early stopping.
    pub fn fit(method: Method, split: &DataSplit, cfg: &RunConfig) -> Result<Self> {
        let full = || split.train_full();
        Ok(match method {
            Method::Epc => Fitted::Epc(EpcModel::fit(&full())?),
            Method::Raw => Fitted::Raw(RawEnsemble),
            Method::Emos => Fitted::Emos(EmosModel::fit(&full(), &cfg.emos)?),
            Method::Mbm => Fitted::Mbm(MbmModel::fit(&full(), &cfg.mbm)?),
            Method::Idr => Fitted::Idr(IdrModel::fit(&full(), &cfg.idr)?),
            Method::EmosGb => Fitted::EmosGb(GbmModel::fit(&full(), &cfg.emos_gb)?),
            Method::Qrf => Fitted::Qrf(QrfModel::fit(&full(), &cfg.qrf)?),
            Method::Drn | Method::Bqn | Method::Hen => {
                let head = method.head().expect("network method");
                Fitted::Nn(NnModel::fit(head, &split.train, &split.validation, &cfg.nn)?)
            }
        })
    }

    pub fn forecaster(&self) -> &dyn Forecaster {
        match self {
            Fitted::Epc(m) => m,
            Fitted::Raw(m) => m,
            Fitted::Emos(m) => m,
            Fitted::Mbm(m) => m,
            Fitted::Idr(m) => m,
            Fitted::EmosGb(m) => m,
            Fitted::Qrf(m) => m,
            Fitted::Nn(m) => m,
        }
    }

    /// Writes the model file (none for the raw ensemble) and, for
    /// networks, one training log per member.
    pub fn save(&self, method: Method, out: &Path) -> Result<()> {
        let path = model_path(method, out);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        match self {
            Fitted::Raw(_) => {}
            Fitted::Epc(m) => write_json(&path, m)?,
            Fitted::Emos(m) => write_json(&path, m)?,
            Fitted::Mbm(m) => write_json(&path, m)?,
            Fitted::Idr(m) => write_json(&path, m)?,
            Fitted::EmosGb(m) => write_json(&path, m)?,
            Fitted::Qrf(m) => {
                let mut w = BufWriter::new(create(&path)?);
                m.write_jsonl(&mut w)?;
                w.flush().with_context(|| format!("writing {}", path.display()))?;
            }
            Fitted::Nn(m) => {
                write_json(&path, &m.to_json())?;
                write_training_logs(method, m, out)?;
            }
        }
        Ok(())
    }

    pub fn load(method: Method, out: &Path) -> Result<Self> {
        let path = model_path(method, out);
        Ok(match method {
            Method::Raw => Fitted::Raw(RawEnsemble),
            Method::Epc => Fitted::Epc(read_json(&path)?),
            Method::Emos => Fitted::Emos(read_json(&path)?),
            Method::Mbm => Fitted::Mbm(read_json(&path)?),
            Method::Idr => Fitted::Idr(read_json(&path)?),
            Method::EmosGb => Fitted::EmosGb(read_json(&path)?),
            Method::Qrf => {
                let f = open(&path)?;
                Fitted::Qrf(QrfModel::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?)
            }
            Method::Drn | Method::Bqn | Method::Hen => Fitted::Nn(NnModel::from_json(read_json(&path)?)?),
        })
    }
}

pub fn model_path(method: Method, out: &Path) -> PathBuf {
    let ext = if method == Method::Qrf { "jsonl" } else { "json" };
    out.join("models").join(format!("{}.{ext}", method.name()))
}

fn write_training_logs(method: Method, m: &NnModel, out: &Path) -> Result<()> {
    let dir = out.join("logs").join(method.name());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (lead, l) in &m.leads {
        for (k, log) in l.logs.iter().enumerate() {
            let path = dir.join(format!("lead_{lead}_member_{k}.csv"));
            let mut w = csv::Writer::from_writer(create(&path)?);
            for e in log {
                w.serialize(e)?;
            }
            w.flush().with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| gustpp_core::Error::Io { path: path.to_path_buf(), source }.into())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| gustpp_core::Error::Io { path: path.to_path_buf(), source }.into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer(&mut w, value).map_err(gustpp_core::Error::Json)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = open(path)?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(gustpp_core::Error::Json)
        .with_context(|| format!("reading {}", path.display()))
}
