//! Quadrature reference for the CRPS, independent of every closed form:
//! it only queries the forecast CDF.

use crate::distributions::ProbForecast;
use crate::scalar::Scalar;

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod integration to absolute tolerance `tol`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 48 || (b - a) < 1e-14 * (1.0 + a.abs()) {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    if b <= a {
        return 0.0;
    }
    rec(f, a, b, tol, 0)
}

fn kinks<T: Scalar>(forecast: &ProbForecast<T>) -> Vec<f64> {
    match forecast {
        ProbForecast::Ensemble(e) => e.members.iter().map(|x| x.as_f64()).collect(),
        ProbForecast::Histogram(h) => h.edges.iter().map(|x| x.as_f64()).collect(),
        ProbForecast::StepCdf(s) => s.thresholds.iter().map(|x| x.as_f64()).collect(),
        ProbForecast::PiecewiseLinear(q) => q.values.iter().map(|x| x.as_f64()).collect(),
        ProbForecast::TruncatedLogistic(_) => vec![0.0],
        ProbForecast::Bernstein(_) => Vec::new(),
    }
}

fn support<T: Scalar>(forecast: &ProbForecast<T>) -> (f64, f64) {
    match forecast {
        ProbForecast::TruncatedLogistic(d) => {
            let hi = d.quantile(T::lit(1.0 - 1e-10)).expect("valid level").as_f64();
            (0.0, hi)
        }
        ProbForecast::Bernstein(b) => (
            b.coefficients[0].as_f64(),
            b.coefficients.last().unwrap().as_f64(),
        ),
        other => (
            other.quantile(T::zero()).as_f64(),
            other.quantile(T::one()).as_f64(),
        ),
    }
}

/// `∫ (F(z) - 1{y <= z})² dz` by piecewise adaptive quadrature between the
/// forecast's kinks and the observation.
pub fn crps_numeric_oracle<T: Scalar>(forecast: &ProbForecast<T>, y: T) -> T {
    let yf = y.as_f64();
    let (lo, hi) = support(forecast);
    let mut pts = kinks(forecast);
    pts.push(yf);
    pts.push(lo);
    pts.push(hi);
    let a = lo.min(yf);
    let b = hi.max(yf);
    pts.retain(|&p| p >= a && p <= b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let integrand = |z: f64| {
        let fz = forecast.cdf(T::lit(z)).as_f64();
        let ind = if yf <= z { 1.0 } else { 0.0 };
        (fz - ind) * (fz - ind)
    };
    let total: f64 = pts
        .windows(2)
        .map(|w| integrate_adaptive(&integrand, w[0], w[1], 1e-13))
        .sum();
    T::lit(total)
}
