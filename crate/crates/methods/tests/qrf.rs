use gustpp_core::scoring::evaluation_levels;
use gustpp_methods::qrf::{fit_forest, Forest, Node, QrfConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(n_trees: usize, seed: u64) -> QrfConfig {
    QrfConfig { n_trees, seed, ..Default::default() }
}

/// y depends on column 0 through a step and on column 1 linearly; the
/// remaining columns are noise.
fn data(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen::<f64>()).collect()).collect();
    let y = x
        .iter()
        .map(|r| 5.0 + if r[0] > 0.5 { 4.0 } else { 0.0 } + r[1] + 0.3 * rng.gen::<f64>())
        .collect();
    (x, y)
}

fn check_structure(f: &Forest, cfg: &QrfConfig) {
    let n = f.y.len();
    for t in &f.trees {
        assert_eq!(t.samples.len(), n);
        assert!(t.depth() <= cfg.max_depth);
        let mut covered = vec![0usize; n];
        for node in &t.nodes {
            if let Node::Leaf { start, len } = node {
                assert!(*len as usize >= cfg.min_node_size);
                for pos in *start..*start + *len {
                    covered[pos as usize] += 1;
                }
            }
        }
        assert!(covered.iter().all(|&c| c == 1), "leaves must partition the bootstrap sample");
    }
}

#[test]
fn trees_respect_leaf_size_depth_and_partition() {
    let (x, y) = data(300, 4, 1);
    let cfg = QrfConfig { max_depth: 4, ..small(20, 1) };
    let f = fit_forest(&x, &y, &cfg, 0).unwrap();
    check_structure(&f, &cfg);
    let f = fit_forest(&x, &y, &small(20, 2), 0).unwrap();
    check_structure(&f, &small(20, 2));
}

#[test]
fn constant_response_gives_constant_quantiles() {
    let (x, _) = data(50, 3, 2);
    let y = vec![7.5; 50];
    let f = fit_forest(&x, &y, &small(10, 1), 0).unwrap();
    let q = f.predict(&x[3]).unwrap();
    assert!(q.values.iter().all(|&v| v == 7.5));
}

#[test]
fn too_few_cases_is_an_error() {
    let (x, y) = data(9, 2, 3);
    assert!(fit_forest(&x, &y, &small(5, 1), 0).is_err());
}

#[test]
fn planted_step_drives_the_root_split() {
    // mtry = 2 of 4, so column 0 is a root candidate with probability 1/2
    // and wins whenever it is one
    let mut on_planted = 0;
    for seed in 0..100 {
        let (x, y) = data(200, 4, 1000 + seed);
        let f = fit_forest(&x, &y, &small(1, seed), 0).unwrap();
        if let Node::Split { feature: 0, threshold, .. } = &f.trees[0].nodes[0] {
            on_planted += 1;
            assert!((threshold - 0.5).abs() < 0.05);
        }
    }
    assert!(on_planted >= 35, "{on_planted} of 100 root splits on the planted column");
}

#[test]
fn model_round_trips_through_json_lines() {
    use gustpp_core::dataset::{generate_scenario, ScenarioConfig};
    use gustpp_core::Forecaster;
    use gustpp_methods::QrfModel;
    let cfg = ScenarioConfig { n_stations: 2, n_years: 1, lead_times: vec![6], day_stride: 3, ..Default::default() };
    let data = generate_scenario(&cfg).unwrap().data;
    let m = QrfModel::fit(&data, &small(20, 1)).unwrap();
    assert!(!m.features.iter().any(|&j| data.predictor_names[j] == "u_sd"));
    let mut buf = Vec::new();
    m.write_jsonl(&mut buf).unwrap();
    let back = QrfModel::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, m);
    let c = &data.cases[5];
    assert_eq!(m.predict(c).unwrap(), back.predict(c).unwrap());
}

#[test]
fn same_seed_same_forest_different_seed_different_forest() {
    let (x, y) = data(150, 3, 4);
    let a = fit_forest(&x, &y, &small(15, 9), 0).unwrap();
    let b = fit_forest(&x, &y, &small(15, 9), 0).unwrap();
    let c = fit_forest(&x, &y, &small(15, 10), 0).unwrap();
    let digest = |f: &Forest| {
        let mut buf = Vec::new();
        f.write_jsonl(&mut buf).unwrap();
        buf
    };
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c));
}

#[test]
fn quantiles_are_monotone_and_inside_the_training_range() {
    let (x, y) = data(400, 4, 5);
    let f = fit_forest(&x, &y, &small(50, 3), 0).unwrap();
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let levels = evaluation_levels::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let row: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let q = f.quantiles(&row, &levels);
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
        assert!(q.iter().all(|&v| v >= lo && v <= hi));
    }
    let w: f64 = f.weights(&x[0]).iter().map(|p| p.1).sum();
    assert!((w - 1.0).abs() < 1e-12);
}

#[test]
fn oob_importance_ranks_planted_first_and_noise_near_zero() {
    let (x, y) = data(500, 5, 7);
    let f = fit_forest(&x, &y, &small(200, 4), 0).unwrap();
    let imp = f.oob_importance(&x, 11).unwrap();
    let best = (0..5).max_by(|&a, &b| imp.delta[a].total_cmp(&imp.delta[b])).unwrap();
    assert_eq!(best, 0);
    assert!(imp.delta[1] > imp.delta[2]);
    for j in 2..5 {
        assert!(imp.delta[j].abs() < 3.0 * imp.delta_sd[j].max(1e-4), "noise column {j}: {} sd {}", imp.delta[j], imp.delta_sd[j]);
    }
}

#[test]
fn duplicated_column_shares_importance() {
    let (x, y) = data(500, 3, 8);
    let dup: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0], r[1], r[2], r[0]]).collect();
    let single = fit_forest(&x, &y, &small(200, 5), 0).unwrap().oob_importance(&x, 1).unwrap();
    let pair = fit_forest(&dup, &y, &small(200, 5), 0).unwrap().oob_importance(&dup, 1).unwrap();
    let combined = pair.delta[0] + pair.delta[3];
    let noise = 3.0 * (single.delta_sd[0] + pair.delta_sd[0] + pair.delta_sd[3]);
    assert!(combined >= single.delta[0] - noise, "pair {combined} vs single {}", single.delta[0]);
    assert!(pair.delta[0] < single.delta[0] + noise);
}
