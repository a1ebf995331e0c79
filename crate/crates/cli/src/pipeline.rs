use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use gustpp_core::dataset::{generate_scenario, SplitYears, N_MEMBERS};
use gustpp_core::scoring::{evaluation_levels, score_all, ScoreName};
use gustpp_core::verification::{
    benjamini_hochberg, dm_test, ensemble_rank, permutation_importance, pit, resolve_feature, skill_score, Feature,
    HistogramDiag,
};
use gustpp_core::{DataSplit, Dataset, ForecastCase, Forecaster};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::models::Fitted;

pub const SCORE_COLUMNS: &[&str] = &["method", "station_id", "lead_time", "score_name", "value"];
pub const CASE_COLUMNS: &[&str] = &["method", "station_id", "date", "lead_time", "crps"];

/// Bins of the rank and PIT histograms.
pub const HISTOGRAM_BINS: usize = N_MEMBERS + 1;

pub fn reports_dir(out: &Path) -> PathBuf {
    out.join("reports")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// CSV writer with the header already written, so empty reports still
/// carry their columns.
fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path)
        .map_err(|source| gustpp_core::Error::Io { path: path.to_path_buf(), source })?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.write_record(header)?;
    Ok(w)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let sc = generate_scenario(&cfg.scenario)?;
    let dir = cfg.out.join("data");
    ensure_dir(&dir)?;
    sc.data.write_csv(&dir.join("cases.csv"))?;
    sc.write_truth_csv(&dir.join("truth.csv"))?;
    write_config(cfg)?;
    log::info!("generated {} cases into {}", sc.data.len(), dir.display());
    Ok(())
}

fn write_config(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("config.json");
    let text = serde_json::to_string_pretty(cfg)?;
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_split(cfg: &RunConfig) -> Result<DataSplit> {
    let path = cfg.data_path();
    let data = Dataset::load_csv(&path).with_context(|| format!("loading {}", path.display()))?;
    let years = SplitYears::standard(&data.years())?;
    Ok(data.split_chronological(&years)?)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    write_config(cfg)?;
    for &m in &cfg.methods {
        let t = Instant::now();
        let fitted = Fitted::fit(m, &split, cfg).with_context(|| format!("fitting {m}"))?;
        fitted.save(m, &cfg.out)?;
        log::info!("{m}: trained in {:.1} s", t.elapsed().as_secs_f64());
    }
    Ok(())
}

fn observed(cases: &[ForecastCase]) -> Vec<&ForecastCase> {
    cases.iter().filter(|c| c.observation.is_some()).collect()
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let dir = cfg.out.join("forecasts");
    ensure_dir(&dir)?;
    let levels = evaluation_levels::<f64>();
    for &m in &cfg.methods {
        let model = Fitted::load(m, &cfg.out)?;
        let f = model.forecaster();
        let rows: Vec<Vec<f64>> = split
            .test
            .cases
            .par_iter()
            .map(|c| Ok(f.predict(c)?.quantiles(&levels)))
            .collect::<gustpp_core::Result<_>>()
            .with_context(|| format!("predicting {m}"))?;
        let path = dir.join(format!("{}.csv", m.name()));
        let quantile_columns: Vec<String> = (1..=levels.len()).map(|i| format!("q{i}")).collect();
        let mut header = vec!["station_id", "date", "lead_time", "obs"];
        header.extend(quantile_columns.iter().map(String::as_str));
        let mut w = writer(&path, &header)?;
        for (c, q) in split.test.cases.iter().zip(rows) {
            let mut rec = vec![
                c.station_id.to_string(),
                c.date.to_string(),
                c.lead_time_h.to_string(),
                c.observation.map(|y| y.to_string()).unwrap_or_default(),
            ];
            rec.extend(q.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        finish(w, &path)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: String,
    pub station_id: u32,
    pub lead_time: u32,
    pub score_name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub method: String,
    pub station_id: u32,
    pub date: String,
    pub lead_time: u32,
    pub crps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub method: String,
    pub lead_time: String,
    pub n: usize,
    pub chi2: f64,
    pub p_value: f64,
    pub coverage: f64,
    pub mean_pi_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub score_name: String,
    pub value: f64,
}

struct Evaluated {
    station: u32,
    lead: u32,
    scores: Vec<(ScoreName, f64)>,
    /// Rank for the raw ensemble, (u)PIT bin otherwise, 1-based.
    rank: usize,
    covered: bool,
    pi_length: f64,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn value(&self) -> f64 {
        self.sum / self.n.max(1) as f64
    }
}

/// Per-case scores of one method on the test year.
fn evaluate_method(m: Method, f: &dyn Forecaster, test: &[&ForecastCase], cfg: &RunConfig) -> Result<Vec<Evaluated>> {
    let seed = cfg.seed();
    test.par_iter()
        .enumerate()
        .map(|(i, c)| {
            let y = c.require_observation()?;
            let forecast = f.predict(c)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let rank = if m == Method::Raw {
                ensemble_rank(&c.ensemble, y, &mut rng)
            } else {
                let u = pit(&forecast, y, &mut rng);
                ((u * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1) + 1
            };
            let all = score_all(&forecast, y, &cfg.brier_thresholds);
            let get = |n: ScoreName| all.iter().find(|s| s.name == n).map(|s| s.value);
            Ok(Evaluated {
                station: c.station_id,
                lead: c.lead_time_h,
                covered: get(ScoreName::PiCovered) == Some(1.0),
                pi_length: get(ScoreName::PiLength).unwrap_or(f64::NAN),
                scores: all.into_iter().map(|s| (s.name, s.value)).collect(),
                rank,
            })
        })
        .collect::<gustpp_core::Result<Vec<_>>>()
        .with_context(|| format!("evaluating {m}"))
}

fn calibration_row(method: Method, lead: String, cases: &[&Evaluated]) -> (CalibrationRow, HistogramDiag) {
    let ranks: Vec<usize> = cases.iter().map(|e| e.rank).collect();
    let covered: Vec<bool> = cases.iter().map(|e| e.covered).collect();
    let lengths: Vec<f64> = cases.iter().map(|e| e.pi_length).collect();
    let d = HistogramDiag::from_ranks(&ranks, HISTOGRAM_BINS).with_intervals(&covered, &lengths);
    let row = CalibrationRow {
        method: method.name().into(),
        lead_time: lead,
        n: cases.len(),
        chi2: d.chi2,
        p_value: d.p_value,
        coverage: d.coverage.unwrap_or(f64::NAN),
        mean_pi_length: d.mean_pi_length.unwrap_or(f64::NAN),
    };
    (row, d)
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let test = observed(&split.test.cases);
    if test.is_empty() {
        return Err(gustpp_core::Error::Config("test year has no observations".into()).into());
    }
    let dir = reports_dir(&cfg.out);
    ensure_dir(&dir)?;
    let (scores_path, cases_path) = (dir.join("scores.csv"), dir.join("case_scores.csv"));
    let (cal_path, hist_path, sum_path) =
        (dir.join("calibration.csv"), dir.join("rank_histograms.csv"), dir.join("summary.csv"));
    let mut scores_w = writer(&scores_path, SCORE_COLUMNS)?;
    let mut cases_w = writer(&cases_path, CASE_COLUMNS)?;
    let mut cal_w = writer(&cal_path, &["method", "lead_time", "n", "chi2", "p_value", "coverage", "mean_pi_length"])?;
    let mut hist_w = writer(&hist_path, &["method", "lead_time", "bin", "count"])?;
    let mut summary: Vec<SummaryRow> = Vec::new();
    let mut mean_crps: BTreeMap<Method, f64> = BTreeMap::new();

    for &m in &cfg.methods {
        let model = Fitted::load(m, &cfg.out)?;
        let ev = evaluate_method(m, model.forecaster(), &test, cfg)?;

        let mut local: BTreeMap<(u32, u32), BTreeMap<String, Mean>> = BTreeMap::new();
        let mut overall: BTreeMap<String, Mean> = BTreeMap::new();
        for e in &ev {
            let slot = local.entry((e.station, e.lead)).or_default();
            for &(name, v) in &e.scores {
                // infinite log scores are counted, not averaged
                let (key, v) = if name == ScoreName::Ls && !v.is_finite() {
                    ("LS_infinite".to_string(), 1.0)
                } else {
                    (name.to_string(), v)
                };
                slot.entry(key.clone()).or_default().add(v);
                overall.entry(key).or_default().add(v);
            }
        }
        for ((station, lead), by_name) in &local {
            for (name, mean) in by_name {
                let value = if name == "LS_infinite" { mean.sum } else { mean.value() };
                scores_w.serialize(ScoreRow {
                    method: m.name().into(),
                    station_id: *station,
                    lead_time: *lead,
                    score_name: name.clone(),
                    value,
                })?;
            }
        }
        for (name, mean) in &overall {
            let value = if name == "LS_infinite" { mean.sum } else { mean.value() };
            summary.push(SummaryRow { method: m.name().into(), score_name: name.clone(), value });
        }
        mean_crps.insert(m, overall.get("CRPS").map(Mean::value).unwrap_or(f64::NAN));

        for (c, e) in test.iter().zip(&ev) {
            let crps = e.scores.iter().find(|s| s.0 == ScoreName::Crps).map(|s| s.1).unwrap_or(f64::NAN);
            cases_w.serialize(CaseScore {
                method: m.name().into(),
                station_id: c.station_id,
                date: c.date.to_string(),
                lead_time: c.lead_time_h,
                crps,
            })?;
        }

        let mut by_lead: BTreeMap<u32, Vec<&Evaluated>> = BTreeMap::new();
        for e in &ev {
            by_lead.entry(e.lead).or_default().push(e);
        }
        for (lead, cases) in &by_lead {
            let (row, d) = calibration_row(m, lead.to_string(), cases);
            cal_w.serialize(row)?;
            for (b, count) in d.counts.iter().enumerate() {
                hist_w.write_record([m.name().to_string(), lead.to_string(), (b + 1).to_string(), count.to_string()])?;
            }
        }
        let all: Vec<&Evaluated> = ev.iter().collect();
        cal_w.serialize(calibration_row(m, "all".into(), &all).0)?;
        log::info!("{m}: mean test CRPS {:.4}", mean_crps[&m]);
    }
    if let Some(&raw) = mean_crps.get(&Method::Raw) {
        for (&m, &c) in &mean_crps {
            if let Ok(s) = skill_score(c, raw) {
                summary.push(SummaryRow { method: m.name().into(), score_name: "CRPSS_raw".into(), value: s });
            }
        }
    }
    let mut sum_w = writer(&sum_path, &["method", "score_name", "value"])?;
    for r in summary {
        sum_w.serialize(r)?;
    }
    finish(scores_w, &scores_path)?;
    finish(cases_w, &cases_path)?;
    finish(cal_w, &cal_path)?;
    finish(hist_w, &hist_path)?;
    finish(sum_w, &sum_path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmRow {
    pub station: u32,
    pub lead: u32,
    pub method_a: String,
    pub method_b: String,
    pub t: f64,
    pub p: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmSummaryRow {
    pub method_a: String,
    pub method_b: String,
    pub n_tests: usize,
    pub n_rejected: usize,
    pub a_better: usize,
    pub b_better: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub station: u32,
    pub lead: String,
    pub method: String,
    pub crps: f64,
}

type CaseMap = BTreeMap<(u32, u32), BTreeMap<String, f64>>;

pub fn read_case_scores(out: &Path) -> Result<BTreeMap<String, CaseMap>> {
    let path = reports_dir(out).join("case_scores.csv");
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut map: BTreeMap<String, CaseMap> = BTreeMap::new();
    for rec in r.deserialize() {
        let c: CaseScore = rec.with_context(|| format!("reading {}", path.display()))?;
        map.entry(c.method).or_default().entry((c.station_id, c.lead_time)).or_default().insert(c.date, c.crps);
    }
    Ok(map)
}

/// DM tests with BH correction across station/lead pairs for every pair of
/// methods, plus the best method per station.
pub fn compare(cfg: &RunConfig) -> Result<()> {
    let scores = read_case_scores(&cfg.out)?;
    let methods: Vec<Method> = cfg.methods.iter().copied().filter(|m| scores.contains_key(m.name())).collect();
    if methods.len() < cfg.methods.len() {
        let missing: Vec<&str> =
            cfg.methods.iter().filter(|m| !scores.contains_key(m.name())).map(|m| m.name()).collect();
        return Err(gustpp_core::Error::MissingKey(format!("evaluated scores for {}", missing.join(", "))).into());
    }
    let dir = reports_dir(&cfg.out);
    let (dm_path, sum_path, best_path) = (dir.join("dm_tests.csv"), dir.join("dm_summary.csv"), dir.join("best_method.csv"));
    let mut dm_w = writer(&dm_path, &["station", "lead", "method_a", "method_b", "t", "p", "rejected"])?;
    let mut sum_w = writer(&sum_path, &["method_a", "method_b", "n_tests", "n_rejected", "a_better", "b_better"])?;
    for (i, &a) in methods.iter().enumerate() {
        for &b in &methods[i + 1..] {
            let rows = dm_pair(&scores[a.name()], &scores[b.name()])?;
            let p: Vec<f64> = rows.iter().map(|r| r.2.p_two_sided).collect();
            let bh = benjamini_hochberg(&p, cfg.alpha);
            let mut s = DmSummaryRow {
                method_a: a.name().into(),
                method_b: b.name().into(),
                n_tests: rows.len(),
                n_rejected: bh.n_rejected(),
                a_better: 0,
                b_better: 0,
            };
            for ((station, lead, r), &rej) in rows.iter().zip(&bh.rejected) {
                if rej && r.statistic < 0.0 {
                    s.a_better += 1;
                } else if rej {
                    s.b_better += 1;
                }
                dm_w.serialize(DmRow {
                    station: *station,
                    lead: *lead,
                    method_a: a.name().into(),
                    method_b: b.name().into(),
                    t: r.statistic,
                    p: r.p_two_sided,
                    rejected: rej,
                })?;
            }
            sum_w.serialize(s)?;
        }
    }
    finish(dm_w, &dm_path)?;
    finish(sum_w, &sum_path)?;

    let mut best_w = writer(&best_path, &["station", "lead", "method", "crps"])?;
    let mut per_station: BTreeMap<u32, BTreeMap<Method, Mean>> = BTreeMap::new();
    let keys: Vec<(u32, u32)> = scores[methods[0].name()].keys().copied().collect();
    for key in keys {
        let mut best: Option<(Method, f64)> = None;
        for &m in &methods {
            let Some(v) = scores[m.name()].get(&key) else { continue };
            let mean = v.values().sum::<f64>() / v.len().max(1) as f64;
            let slot = per_station.entry(key.0).or_default().entry(m).or_default();
            slot.sum += v.values().sum::<f64>();
            slot.n += v.len();
            if best.is_none_or(|(_, b)| mean < b) {
                best = Some((m, mean));
            }
        }
        if let Some((m, crps)) = best {
            best_w.serialize(BestRow { station: key.0, lead: key.1.to_string(), method: m.name().into(), crps })?;
        }
    }
    for (station, by_method) in per_station {
        let best = by_method.iter().map(|(m, v)| (*m, v.value())).min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((m, crps)) = best {
            best_w.serialize(BestRow { station, lead: "all".into(), method: m.name().into(), crps })?;
        }
    }
    finish(best_w, &best_path)
}

fn dm_pair(a: &CaseMap, b: &CaseMap) -> Result<Vec<(u32, u32, gustpp_core::verification::DmResult)>> {
    let mut out = Vec::new();
    for (key, sa) in a {
        let Some(sb) = b.get(key) else { continue };
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        for (date, va) in sa {
            if let Some(vb) = sb.get(date) {
                xa.push(*va);
                xb.push(*vb);
            }
        }
        if xa.len() < 2 {
            continue;
        }
        out.push((key.0, key.1, dm_test(&xa, &xb)?));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub method: String,
    pub kind: String,
    pub lead_time: String,
    pub feature: String,
    pub delta: f64,
    pub relative: Option<f64>,
    pub delta_sd: Option<f64>,
}

/// Jointly permuted feature sets in addition to single predictors.
pub fn feature_sets(predictor_names: &[String]) -> Vec<(String, Vec<Feature>)> {
    let mut sets: Vec<(String, Vec<Feature>)> = predictor_names
        .iter()
        .enumerate()
        .map(|(j, n)| (n.clone(), vec![Feature::Predictor(j)]))
        .collect();
    sets.push(("ensemble".into(), vec![Feature::Ensemble]));
    let vmax: Vec<Feature> = ["vmax_mean", "vmax_sd"]
        .iter()
        .filter_map(|n| resolve_feature(predictor_names, n).ok())
        .collect();
    if vmax.len() == 2 {
        sets.push(("vmax_all".into(), vmax));
    }
    sets
}

/// Permutation importance on the test cases of each lead time.
pub fn permutation_rows(
    method: Method,
    f: &dyn Forecaster,
    test: &Dataset,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<ImportanceRow>> {
    let mut rows = Vec::new();
    for lead in test.lead_times() {
        let cases: Vec<ForecastCase> =
            test.cases.iter().filter(|c| c.lead_time_h == lead && c.observation.is_some()).cloned().collect();
        let score = |cs: &[ForecastCase]| -> gustpp_core::Result<f64> {
            let total: f64 = cs
                .par_iter()
                .map(|c| Ok(gustpp_core::scoring::crps(&f.predict(c)?, c.require_observation()?)))
                .collect::<gustpp_core::Result<Vec<f64>>>()?
                .iter()
                .sum();
            Ok(total / cs.len().max(1) as f64)
        };
        for (name, set) in feature_sets(&test.predictor_names) {
            let r = permutation_importance(&name, &cases, &set, n_repeats, seed, score)?;
            rows.push(ImportanceRow {
                method: method.name().into(),
                kind: "permutation".into(),
                lead_time: lead.to_string(),
                feature: name,
                delta: r.delta,
                relative: Some(r.relative),
                delta_sd: Some(r.delta_sd),
            });
        }
    }
    Ok(rows)
}

pub fn importance(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let dir = reports_dir(&cfg.out);
    ensure_dir(&dir)?;
    let path = dir.join("importance.csv");
    let mut w = writer(&path, &["method", "kind", "lead_time", "feature", "delta", "relative", "delta_sd"])?;
    let mut any = false;
    for &m in cfg.methods.iter().filter(|m| m.uses_predictors()) {
        any = true;
        let model = Fitted::load(m, &cfg.out)?;
        let mut rows = Vec::new();
        match &model {
            Fitted::Qrf(q) => {
                for r in q.oob_importance(&split.train_full(), cfg.seed())? {
                    rows.push(ImportanceRow {
                        method: m.name().into(),
                        kind: "oob".into(),
                        lead_time: "all".into(),
                        feature: r.predictor,
                        delta: r.delta,
                        relative: Some(r.relative),
                        delta_sd: Some(r.delta_sd),
                    });
                }
            }
            Fitted::EmosGb(g) => {
                let imp = g.coefficient_importance();
                for (kind, list) in [("coef_location", imp.location), ("coef_scale", imp.scale)] {
                    for (feature, v) in list {
                        rows.push(ImportanceRow {
                            method: m.name().into(),
                            kind: kind.into(),
                            lead_time: "all".into(),
                            feature,
                            delta: v,
                            relative: None,
                            delta_sd: None,
                        });
                    }
                }
                rows.extend(permutation_rows(m, g, &split.test, cfg.importance_repeats, cfg.seed())?);
            }
            Fitted::Nn(n) => rows.extend(permutation_rows(m, n, &split.test, cfg.importance_repeats, cfg.seed())?),
            _ => {}
        }
        for r in rows {
            w.serialize(r)?;
        }
    }
    if !any {
        log::warn!("none of the selected methods uses predictors; importance.csv is empty");
    }
    finish(w, &path)
}

pub fn run_all(cfg: &RunConfig) -> Result<()> {
    if cfg.data.is_none() {
        generate(cfg)?;
    }
    train(cfg)?;
    predict(cfg)?;
    evaluate(cfg)?;
    compare(cfg)?;
    importance(cfg)
}
