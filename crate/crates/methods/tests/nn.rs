use gustpp_core::dataset::{generate_scenario, ScenarioConfig, SplitYears, TruthSpec};
use gustpp_core::distributions::ProbForecast;
use gustpp_core::scoring::{crps, training_levels};
use gustpp_core::{Error, Forecaster};
use gustpp_methods::nn::binning::{BinCaps, HenBinning};
use gustpp_methods::nn::network::{Architecture, Cache, Network};
use gustpp_methods::nn::train::{mean_loss, sample_loss_grad, train_network, Sample, TrainSettings};
use gustpp_methods::nn::{aggregate, Head, HeadKind, NnConfig, NnModel};
use gustpp_methods::RawEnsemble;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_setup(head: &Head, rng: &mut ChaCha8Rng) -> (Network, Sample) {
    let arch = Architecture {
        n_inputs: rng.gen_range(2..6),
        n_stations: 3,
        embedding_dim: 2,
        hidden: vec![rng.gen_range(3..7), rng.gen_range(2..5)],
        n_outputs: head.n_outputs(),
    };
    let mut net = Network::init(arch.clone(), rng);
    for p in &mut net.params {
        *p += rng.gen_range(-0.3..0.3);
    }
    let x = (0..arch.n_inputs).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let s = Sample { x, station: rng.gen_range(0..3), y: rng.gen_range(0.5..12.0) };
    (net, s)
}

/// Largest componentwise relative error between the analytic gradient and
/// central differences; components below `floor` in both are compared
/// absolutely against `floor`.
fn max_rel_error(head: &Head, net: &mut Network, s: &Sample) -> f64 {
    let mut cache = Cache::default();
    let mut g = vec![0.0; net.params.len()];
    sample_loss_grad(net, head, s, &mut cache, &mut g);
    let one = std::slice::from_ref(s);
    let floor = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..net.params.len() {
        let h = 1e-6 * net.params[i].abs().max(1.0);
        let orig = net.params[i];
        net.params[i] = orig + h;
        let up = mean_loss(net, head, one);
        net.params[i] = orig - h;
        let down = mean_loss(net, head, one);
        net.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn head_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let edges: Vec<f64> = (0..=20).map(|k| 0.7 * k as f64).collect();
    for head in [Head::Drn, Head::bqn(12), Head::Hen { edges }] {
        for cfg in 0..20 {
            let (mut net, s) = random_setup(&head, &mut rng);
            let err = max_rel_error(&head, &mut net, &s);
            assert!(err < 1e-4, "{:?} config {cfg}: relative error {err}", head.kind());
        }
    }
}

#[test]
fn zero_network_outputs() {
    let arch = |k| Architecture { n_inputs: 3, n_stations: 2, embedding_dim: 10, hidden: vec![4, 3], n_outputs: k };
    let mut cache = Cache::default();
    let net = Network::zeros(arch(2));
    net.forward(&[1.0, 2.0, 3.0], 1, &mut cache);
    match Head::Drn.forecast(&cache.output).unwrap() {
        ProbForecast::TruncatedLogistic(d) => assert_eq!((d.mu, d.sigma), (2f64.ln(), 2f64.ln())),
        _ => unreachable!(),
    }
    let net = Network::zeros(arch(20));
    net.forward(&[1.0, 2.0, 3.0], 0, &mut cache);
    let edges: Vec<f64> = (0..=20).map(f64::from).collect();
    match (Head::Hen { edges }).forecast(&cache.output).unwrap() {
        ProbForecast::Histogram(h) => assert!(h.probs.iter().all(|&p| (p - 0.05).abs() < 1e-15)),
        _ => unreachable!(),
    }
}

#[test]
fn head_outputs_are_valid_for_random_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let levels = training_levels::<f64>();
    let bqn = Head::bqn(12);
    let hen = Head::Hen { edges: (0..=20).map(|k| k as f64 * 1.5).collect() };
    let mut cache = Cache::default();
    for _ in 0..1000 {
        let (mut net, s) = random_setup(&bqn, &mut rng);
        for p in &mut net.params {
            *p *= 5.0;
        }
        net.forward(&s.x, s.station, &mut cache);
        let q = bqn.forecast(&cache.output).unwrap().quantiles(&levels);
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
        assert!(q[0] >= 0.0);
        let (net, s) = random_setup(&hen, &mut rng);
        net.forward(&s.x, s.station, &mut cache);
        match hen.forecast(&cache.output).unwrap() {
            ProbForecast::Histogram(h) => assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6),
            _ => unreachable!(),
        }
    }
}

#[test]
fn drn_gradient_vanishes_at_a_point_mass_fit() {
    let arch = Architecture { n_inputs: 2, n_stations: 1, embedding_dim: 2, hidden: vec![3, 3], n_outputs: 2 };
    let mut net = Network::zeros(arch);
    let y: f64 = 6.0;
    let n = net.params.len();
    net.params[n - 2] = y.exp_m1().ln();
    net.params[n - 1] = -40.0;
    let s = Sample { x: vec![0.4, -1.0], station: 0, y };
    let mut g = vec![0.0; n];
    sample_loss_grad(&net, &Head::Drn, &s, &mut Cache::default(), &mut g);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "gradient norm {norm}");
}

// the pairwise merging leaves bins of one or two base counts; the share
// band holds when those two sizes straddle 5%
const N_OBS: usize = 2000;

#[test]
fn binning_on_uniform_observations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let obs: Vec<f64> = (0..N_OBS).map(|_| rng.gen_range(0.0..30.0)).collect();
    let b = HenBinning::build(&obs, 20, BinCaps::default()).unwrap();
    assert_eq!(b.n_bins(), 20);
    let w = b.widths();
    assert!(w[0] <= 2.0 && w[19] <= 7.0 && w[1..19].iter().all(|&v| v <= 5.0));
    let shares: Vec<f64> = b.counts.iter().map(|&c| c as f64 / N_OBS as f64).collect();
    println!("{shares:?}");
    assert!(shares.iter().all(|s| (s - 0.05).abs() <= 0.02), "{shares:?}");
}

#[test]
fn aggregation_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bqn = Head::bqn(12);
    let outs: Vec<Vec<f64>> = (0..10).map(|_| (0..13).map(|_| rng.gen_range(-2.0..1.0)).collect()).collect();
    let members: Vec<_> = outs.iter().map(|o| bqn.forecast(o).unwrap()).collect();
    let agg = aggregate(HeadKind::Bqn, &members).unwrap();
    for tau in [0.01, 0.3, 0.77, 0.99] {
        let mean = members.iter().map(|m| m.quantile(tau)).sum::<f64>() / 10.0;
        assert!((agg.quantile(tau) - mean).abs() < 1e-12);
    }
    let same = vec![members[0].clone(); 10];
    let one = aggregate(HeadKind::Bqn, &same).unwrap();
    assert!((one.quantile(0.4) - members[0].quantile(0.4)).abs() < 1e-12);

    let hen = Head::Hen { edges: (0..=20).map(|k| k as f64).collect() };
    let members: Vec<_> = (0..10)
        .map(|_| hen.forecast(&(0..20).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>()).unwrap())
        .collect();
    match aggregate(HeadKind::Hen, &members).unwrap() {
        ProbForecast::PiecewiseLinear(q) => {
            assert!(q.levels.len() > 21 && q.levels.len() <= 10 * 19 + 2);
            for tau in [0.1, 0.5, 0.9] {
                let mean = members.iter().map(|m| m.quantile(tau)).sum::<f64>() / 10.0;
                assert!((q.eval(tau) - mean).abs() < 1e-9);
            }
        }
        other => panic!("unexpected {}", other.kind()),
    }
    let drn: Vec<_> = (0..10).map(|k| Head::Drn.forecast(&[1.0 + k as f64 * 0.1, 0.5]).unwrap()).collect();
    match aggregate(HeadKind::Drn, &drn).unwrap() {
        ProbForecast::TruncatedLogistic(d) => {
            let mu = (0..10).map(|k| (1.0 + k as f64 * 0.1).exp().ln_1p()).sum::<f64>() / 10.0;
            assert!((d.mu - mu).abs() < 1e-12);
            assert!((d.sigma - 0.5f64.exp().ln_1p()).abs() < 1e-12);
        }
        _ => unreachable!(),
    }
}

fn small_scenario() -> gustpp_core::DataSplit {
    let cfg = ScenarioConfig {
        n_stations: 5,
        n_years: 3,
        lead_times: vec![6],
        truth: TruthSpec::Nonlinear,
        day_stride: 2,
        ..Default::default()
    };
    let sc = generate_scenario(&cfg).unwrap();
    sc.data.split_chronological(&SplitYears::standard(&cfg.years()).unwrap()).unwrap()
}

#[test]
fn training_reduces_loss_and_beats_the_raw_ensemble() {
    let split = small_scenario();
    let cfg = NnConfig { ensemble_size: 2, train: TrainSettings { epochs: 40, ..Default::default() }, ..Default::default() };
    let raw: f64 = split.validation.cases.iter().map(|c| crps(&RawEnsemble.predict(c).unwrap(), c.observation.unwrap())).sum::<f64>()
        / split.validation.len() as f64;
    for head in [HeadKind::Drn, HeadKind::Bqn, HeadKind::Hen] {
        let m = NnModel::fit(head, &split.train, &split.validation, &cfg).unwrap();
        let lead = &m.leads[&6];
        for log in &lead.logs {
            assert!(log[4].train_loss < log[0].train_loss, "{head:?}: {:?}", &log[..5]);
        }
        assert_ne!(lead.members[0].params, lead.members[1].params);
        for k in 0..2 {
            let single = NnModel { leads: [(6, gustpp_methods::nn::LeadNetworks { members: vec![lead.members[k].clone()], ..lead.clone() })].into(), ..m.clone() };
            let v: f64 = split.validation.cases.iter().map(|c| crps(&single.predict(c).unwrap(), c.observation.unwrap())).sum::<f64>()
                / split.validation.len() as f64;
            assert!(v < raw, "{head:?} member {k}: {v} vs raw {raw}");
        }
        let json = serde_json::to_string(&m.to_json()).unwrap();
        let back = NnModel::from_json(serde_json::from_str(&json).unwrap()).unwrap();
        let c = &split.test.cases[3];
        assert_eq!(m.predict(c).unwrap(), back.predict(c).unwrap());
        let mut stranger = c.clone();
        stranger.station_id = 999;
        assert!(matches!(m.predict(&stranger), Err(Error::MissingKey(_))));
    }
}

#[test]
fn training_is_deterministic() {
    let split = small_scenario();
    let cfg = NnConfig { ensemble_size: 1, train: TrainSettings { epochs: 3, ..Default::default() }, ..Default::default() };
    let a = NnModel::fit(HeadKind::Drn, &split.train, &split.validation, &cfg).unwrap();
    let b = NnModel::fit(HeadKind::Drn, &split.train, &split.validation, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_network_training_rejects_empty_validation() {
    let arch = Architecture { n_inputs: 1, n_stations: 1, embedding_dim: 1, hidden: vec![2], n_outputs: 2 };
    let s = vec![Sample { x: vec![0.0], station: 0, y: 1.0 }];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(train_network(&arch, &Head::Drn, &s, &[], &TrainSettings::default(), &mut rng).is_err());
}
