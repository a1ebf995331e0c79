use gustpp_methods::idr::{sd_compare, IdrConfig, IdrEnsembleFit, IdrFit, SdRelation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every set partition of `0..n` as block labels (restricted growth strings).
fn partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut labels = vec![0; n];
    fn rec(i: usize, max: usize, labels: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == labels.len() {
            out.push(labels.clone());
            return;
        }
        for l in 0..=max + 1 {
            labels[i] = l;
            rec(i + 1, max.max(l), labels, out);
        }
    }
    if n > 0 {
        rec(1, 0, &mut labels, &mut out);
    }
    out
}

/// Least squares over antitonic vectors by enumerating level-set partitions.
fn brute_force(z: &[f64], dominates: &dyn Fn(usize, usize) -> bool) -> Vec<f64> {
    let n = z.len();
    let mut best = (f64::INFINITY, vec![]);
    for labels in partitions(n) {
        let k = labels.iter().max().unwrap() + 1;
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0.0; k];
        for (i, &l) in labels.iter().enumerate() {
            sum[l] += z[i];
            cnt[l] += 1.0;
        }
        let theta: Vec<f64> = labels.iter().map(|&l| sum[l] / cnt[l]).collect();
        let feasible = (0..n).all(|i| (0..n).all(|j| !dominates(i, j) || theta[i] <= theta[j] + 1e-12));
        if feasible {
            let sse: f64 = theta.iter().zip(z).map(|(t, v)| (t - v).powi(2)).sum();
            if sse < best.0 - 1e-15 {
                best = (sse, theta);
            }
        }
    }
    best.1
}

fn pava_decreasing(z: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64)> = Vec::new();
    for &v in z {
        blocks.push((v, 1.0));
        while blocks.len() > 1 {
            let (m2, w2) = blocks[blocks.len() - 1];
            let (m1, w1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = ((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2);
        }
    }
    blocks.iter().flat_map(|&(m, w)| std::iter::repeat(m).take(w as usize)).collect()
}

#[test]
fn matches_brute_force_on_small_posets() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    for _ in 0..100 {
        let n = rng.gen_range(3..=8);
        let cov: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(0..20) as f64 * 0.5).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0_f64).round()).collect();
        let fit = IdrFit::fit(&cov, &y).unwrap();
        if fit.points.len() != n {
            continue; // duplicated covariates are merged
        }
        let pts = fit.points.clone();
        let dominates = |i: usize, j: usize| sd_compare(&pts[i], &pts[j]).unwrap() == SdRelation::Greater;
        // observations of each merged point
        let y_of: Vec<f64> = pts
            .iter()
            .map(|p| {
                let i = cov.iter().position(|c| {
                    let mut s = c.clone();
                    s.sort_by(f64::total_cmp);
                    &s == p
                });
                y[i.unwrap()]
            })
            .collect();
        for (k, &t) in fit.thresholds.iter().enumerate() {
            let z: Vec<f64> = y_of.iter().map(|&v| if v <= t { 1.0 } else { 0.0 }).collect();
            let oracle = brute_force(&z, &dominates);
            for j in 0..n {
                assert!((fit.cdf[j][k] - oracle[j]).abs() < 1e-8, "threshold {t}: {:?} vs {:?}", fit.cdf.iter().map(|r| r[k]).collect::<Vec<_>>(), oracle);
            }
        }
        checked += 1;
    }
    assert!(checked >= 50, "only {checked} instances checked");
}

#[test]
fn reduces_to_pava_on_a_total_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [10, 57, 200] {
        let mut x: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
        x.sort_by(f64::total_cmp);
        let y: Vec<f64> = x.iter().map(|&v| v * 0.05 + rng.gen_range(0.0..4.0)).collect();
        let cov: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        let fit = IdrFit::fit(&cov, &y).unwrap();
        for (k, &t) in fit.thresholds.iter().enumerate() {
            let z: Vec<f64> = y.iter().map(|&v| if v <= t { 1.0 } else { 0.0 }).collect();
            let pava = pava_decreasing(&z);
            for j in 0..n {
                assert!((fit.cdf[j][k] - pava[j]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn predictions_are_antitonic_and_subbagging_averages() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 120;
    let cov: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let c = rng.gen_range(2.0..12.0);
            (0..5).map(|_| c + rng.gen_range(-1.0..1.0)).collect()
        })
        .collect();
    let y: Vec<f64> = cov.iter().map(|c| c.iter().sum::<f64>() / 5.0 + rng.gen_range(-2.0..2.0)).map(|v: f64| v.max(0.1)).collect();
    let cfg = IdrConfig { n_subsamples: 10, ..Default::default() };
    let ens = IdrEnsembleFit::fit(&cov, &y, &cfg, 9).unwrap();
    assert!(ens.members.iter().all(|m| m.weights.iter().sum::<u32>() == (n / 2) as u32));
    let mut checked = 0;
    while checked < 1000 {
        let c = rng.gen_range(3.0..11.0);
        let a: Vec<f64> = (0..5).map(|_| c + rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(0.0..1.0)).collect();
        if !(ens.is_two_sided(&a) && ens.is_two_sided(&b)) {
            continue;
        }
        let fa = ens.predict(&a).unwrap();
        let fb = ens.predict(&b).unwrap();
        for &t in &fa.thresholds {
            assert!(fb.cdf(t) <= fa.cdf(t) + 1e-12);
        }
        checked += 1;
    }
    assert_eq!(checked, 1000);
    // pointwise mean of members
    let x = &cov[0];
    let f = ens.predict(x).unwrap();
    for &t in f.thresholds.iter().step_by(7) {
        let mean: f64 = ens.members.iter().map(|m| m.predict(x).unwrap().cdf(t)).sum::<f64>() / ens.members.len() as f64;
        assert!((f.cdf(t) - mean).abs() < 1e-12);
    }
}

#[test]
fn in_sample_crps_beats_climatology() {
    use gustpp_core::distributions::EnsembleForecast;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cov: Vec<Vec<f64>> = (0..150).map(|_| (0..4).map(|_| rng.gen_range(1.0..9.0)).collect()).collect();
    let y: Vec<f64> = cov.iter().map(|c| c.iter().sum::<f64>() / 4.0 + rng.gen_range(0.0..1.5)).collect();
    let fit = IdrFit::fit(&cov, &y).unwrap();
    let clim = EnsembleForecast::new(y.clone()).unwrap();
    let (mut s_idr, mut s_clim) = (0.0, 0.0);
    for (c, &v) in cov.iter().zip(&y) {
        s_idr += fit.predict(c).unwrap().crps(v);
        s_clim += clim.crps(v);
    }
    assert!(s_idr <= s_clim);
}
