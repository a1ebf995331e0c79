use chrono::NaiveDate;
use gustpp_core::distributions::TruncatedLogistic;
use gustpp_core::{Dataset, Error, ForecastCase, Forecaster};
use gustpp_methods::gbm::{fit_emos_gb, GbmConfig, GbmModel, Link};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Location driven by column 0, log-scale by column 1, columns 2..p noise.
fn planted(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
        let d = TruncatedLogistic::new(12.0 + 2.0 * row[0], (0.4 * row[1]).exp()).unwrap();
        y.push(d.sample(&mut rng));
        x.push(row);
    }
    (x, y)
}

fn mean_nll(c: &gustpp_methods::gbm::GbmCoefficients, x: &[Vec<f64>], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(r, &v)| c.distribution(r).unwrap().nll_grad(v).0).sum::<f64>() / y.len() as f64
}

#[test]
fn planted_signal_is_selected_on_the_right_link() {
    let (x, y) = planted(2000, 6, 3);
    let c = fit_emos_gb(&x, &y, &GbmConfig::default()).unwrap();
    assert!((c.b[0] - 2.0).abs() < 0.25, "location slope {}", c.b[0]);
    assert!((c.d[1] - 0.4).abs() < 0.15, "scale slope {}", c.d[1]);
    for j in 2..6 {
        assert!(c.b[j].abs() < 0.1 && c.d[j].abs() < 0.1, "noise column {j}: {} {}", c.b[j], c.d[j]);
    }
    let first_loc = c.history.iter().find(|s| s.link == Link::Location).unwrap();
    assert_eq!(first_loc.feature, 0);
    let first_scale = c.history.iter().find(|s| s.link == Link::Scale).unwrap();
    assert_eq!(first_scale.feature, 1);
}

#[test]
fn likelihood_never_increases_along_the_path() {
    let (x, y) = planted(500, 4, 9);
    let c0 = fit_emos_gb(&x, &y, &GbmConfig { max_iter: 0, ..Default::default() }).unwrap();
    let mut prev = mean_nll(&c0, &x, &y);
    let c = fit_emos_gb(&x, &y, &GbmConfig { max_iter: 300, ..Default::default() }).unwrap();
    assert!(!c.history.is_empty());
    for s in &c.history {
        assert!(s.nll <= prev + 1e-12, "iteration {}: {} > {prev}", s.iteration, s.nll);
        prev = s.nll;
    }
    assert!(mean_nll(&c, &x, &y) < mean_nll(&c0, &x, &y));
}

#[test]
fn null_predictors_mostly_give_a_near_intercept_model() {
    let mut sparse = 0;
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..1000).map(|_| (0..5).map(|_| normal(&mut rng)).collect()).collect();
        let d = TruncatedLogistic::new(10.0, 1.5).unwrap();
        let y: Vec<f64> = (0..1000).map(|_| d.sample(&mut rng)).collect();
        let c = fit_emos_gb(&x, &y, &GbmConfig::default()).unwrap();
        if c.n_nonzero() <= 2 {
            sparse += 1;
        }
        assert!(c.b.iter().all(|v| v.abs() < 0.3), "seed {seed}: {:?}", c.b);
    }
    // AIC admits a null predictor with probability about 0.16, so a few
    // seeds pick up more than two
    assert!(sparse >= 30, "{sparse}/40 fits with at most 2 slopes");
}

#[test]
fn planted_location_predictor_enters_first_across_seeds() {
    let mut zero = 0;
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..5000 {
            let row: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
            y.push(TruncatedLogistic::new(12.0 + 2.0 * row[3], 1.5).unwrap().sample(&mut rng));
            x.push(row);
        }
        let c = fit_emos_gb(&x, &y, &GbmConfig::default()).unwrap();
        assert_eq!((c.history[0].link, c.history[0].feature), (Link::Location, 3));
        assert!((c.b[3] - 2.0).abs() < 0.15);
        for j in (0..6).filter(|&j| j != 3) {
            assert!(c.b[j].abs() < 0.05 && c.d[j].abs() < 0.05);
            zero += usize::from(c.b[j] == 0.0);
        }
    }
    assert!(zero >= 24, "{zero}/40 noise location slopes exactly zero");
}

#[test]
fn zero_iterations_match_the_unconditional_fit() {
    let (x, y) = planted(300, 3, 1);
    let c = fit_emos_gb(&x, &y, &GbmConfig { max_iter: 0, ..Default::default() }).unwrap();
    assert!(c.b.iter().chain(&c.d).all(|v| *v == 0.0));
    assert!(c.history.is_empty());
    let m = y.iter().sum::<f64>() / y.len() as f64;
    assert!((c.location(&x[0]) - m).abs() < 0.5);
}

fn dataset(x: &[Vec<f64>], y: &[f64], scale: f64) -> Dataset {
    let names = (0..x[0].len()).map(|j| format!("x{j}")).collect();
    let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    let cases = x
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (r, &v))| ForecastCase {
            station_id: 1,
            date: start + chrono::Days::new(i as u64),
            lead_time_h: 6,
            ensemble: vec![v.max(0.1); 20],
            predictors: r.iter().enumerate().map(|(j, u)| if j == 0 { u * scale + 50.0 } else { *u }).collect(),
            observation: Some(v),
        })
        .collect();
    Dataset::new(names, cases).unwrap()
}

#[test]
fn predictions_are_invariant_to_predictor_scaling() {
    let (x, y) = planted(400, 3, 2);
    let cfg = GbmConfig { max_iter: 200, ..Default::default() };
    let a = GbmModel::fit(&dataset(&x, &y, 1.0), &cfg).unwrap();
    let b_data = dataset(&x, &y, 1000.0);
    let b = GbmModel::fit(&b_data, &cfg).unwrap();
    let a_data = dataset(&x, &y, 1.0);
    for (ca, cb) in a_data.cases.iter().zip(&b_data.cases).take(50) {
        let (pa, pb) = (a.predict(ca).unwrap(), b.predict(cb).unwrap());
        assert!((pa.mean() - pb.mean()).abs() < 1e-6);
        assert!((pa.quantile(0.9) - pb.quantile(0.9)).abs() < 1e-6);
    }
}

#[test]
fn json_round_trip_and_schema_errors() {
    let (x, y) = planted(200, 3, 4);
    let data = dataset(&x, &y, 1.0);
    let m = GbmModel::fit(&data, &GbmConfig { max_iter: 100, ..Default::default() }).unwrap();
    let js = serde_json::to_string(&m).unwrap();
    assert!(js.contains("\"method\":\"emos-gb\""));
    let back: GbmModel = serde_json::from_str(&js).unwrap();
    let c = &data.cases[0];
    assert_eq!(m.predict(c).unwrap().mean(), back.predict(c).unwrap().mean());

    let mut short = c.clone();
    short.predictors.pop();
    match m.predict(&short) {
        Err(Error::MissingKey(msg)) => assert!(msg.contains("x2"), "{msg}"),
        other => panic!("expected missing predictor error, got {other:?}"),
    }
    let names: Vec<String> = vec!["x0".into(), "x1".into()];
    assert!(m.check_schema(&names).is_err());

    let imp = m.coefficient_importance();
    assert_eq!(imp.location.first().map(|p| p.0.as_str()), Some("x0"));
}
