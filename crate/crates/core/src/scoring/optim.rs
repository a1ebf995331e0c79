//! Optimum score estimation: limited-memory quasi-Newton with a Nelder-Mead
//! second run when the first one does not converge cleanly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Objective {
    fn loss(&self, x: &[f64]) -> f64;

    /// Analytic gradient, if available; finite differences otherwise.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn loss_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let f = self.loss(x);
        let g = self.gradient(x).unwrap_or_else(|| central_difference(self, x));
        (f, g)
    }
}

/// Loss-only objective; gradients by central differences.
pub struct FnObjective<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Objective for FnObjective<F> {
    fn loss(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// Objective returning `(loss, gradient)` from one closure.
pub struct GradObjective<F>(pub F);

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective for GradObjective<F> {
    fn loss(&self, x: &[f64]) -> f64 {
        (self.0)(x).0
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some((self.0)(x).1)
    }
    fn loss_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.0)(x)
    }
}

fn central_difference<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = obj.loss(&xp);
            xp[i] = x[i] - h;
            let fm = obj.loss(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Optimizer {
    pub max_iter: usize,
    /// Relative function-change tolerance.
    pub ftol: f64,
    /// Gradient infinity-norm tolerance.
    pub gtol: f64,
    pub memory: usize,
    /// Function-evaluation budget of the simplex run, per parameter.
    pub simplex_evals_per_param: usize,
}

impl Default for Optimizer {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-10,
            gtol: 1e-8,
            memory: 8,
            simplex_evals_per_param: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimStatus {
    Converged,
    /// Quasi-Newton did not converge; the simplex run produced the result.
    ConvergedFallback,
    /// Iteration budget exhausted in both runs.
    MaxIter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub params: Vec<f64>,
    pub loss: f64,
    pub status: OptimStatus,
    pub evaluations: usize,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        !matches!(self.status, OptimStatus::MaxIter)
    }
}

enum QnOutcome {
    Converged,
    Stalled,
    MaxIter,
    NonFinite,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lbfgs<O: Objective + ?Sized>(obj: &O, init: &[f64], opt: &Optimizer, evals: &mut usize) -> (Vec<f64>, f64, QnOutcome) {
    let n = init.len();
    let mut x = init.to_vec();
    let (mut f, mut g) = obj.loss_and_gradient(&x);
    *evals += 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return (x, f, QnOutcome::NonFinite);
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opt.memory);
    for iter in 0..opt.max_iter {
        let gnorm = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gnorm <= opt.gtol {
            return (x, f, QnOutcome::Converged);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map(|(s, y, _)| dot(s, y) / dot(y, y)).unwrap_or(1.0);
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if iter == 0 && hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = obj.loss_and_gradient(&xn);
            *evals += 1;
            if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            return (x, f, QnOutcome::Stalled);
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == opt.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let rel = (f - fn_).abs() / f.abs().max(fn_.abs()).max(1e-300);
        x = xn;
        let f_old = f;
        f = fn_;
        g = gn;
        if rel <= opt.ftol || (f_old - f).abs() <= opt.ftol * 1e-3 {
            return (x, f, QnOutcome::Converged);
        }
    }
    let _ = n;
    (x, f, QnOutcome::MaxIter)
}

/// Returns `(params, loss, converged)`.
fn nelder_mead<O: Objective + ?Sized>(obj: &O, init: &[f64], opt: &Optimizer, evals: &mut usize) -> (Vec<f64>, f64, bool) {
    let n = init.len();
    let budget = opt.simplex_evals_per_param * n.max(1);
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = obj.loss(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let scale = init.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0) * 0.1;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(init, evals);
    simplex.push((init.to_vec(), f0));
    for i in 0..n {
        let mut x = init.to_vec();
        x[i] += scale;
        let f = eval(&x, evals);
        simplex.push((x, f));
    }
    let mut used = n + 1;
    let mut converged = false;
    while used < budget {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let (fbest, fworst) = (simplex[0].1, simplex[n].1);
        if fbest.is_finite() && (fworst - fbest).abs() <= 1e-10 * (fbest.abs() + 1e-10) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = toward(-1.0);
        let fr = eval(&xr, evals);
        used += 1;
        if fr < simplex[0].1 {
            let xe = toward(-2.0);
            let fe = eval(&xe, evals);
            used += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = toward(-0.5);
                let fc = eval(&xc, evals);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = eval(&xc, evals);
                (xc, fc)
            };
            used += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, xi)| b + 0.5 * (xi - b)).collect();
                    let f = eval(&x, evals);
                    *v = (x, f);
                    used += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, f) = simplex.swap_remove(0);
    (x, f, converged)
}

/// Minimizes a mean score over a parameter vector.
///
/// Never returns a loss above the initial loss. A second, derivative-free
/// run is started from the best point when the quasi-Newton run stalls, hits
/// its iteration cap or meets a non-finite value.
pub fn minimize_score<O: Objective + ?Sized>(obj: &O, init: &[f64], opt: &Optimizer) -> Result<Minimum> {
    let f_init = obj.loss(init);
    if !f_init.is_finite() {
        return Err(Error::Optimization {
            reason: "loss not finite at the initial parameters".into(),
            best: init.to_vec(),
            best_loss: f_init,
        });
    }
    if init.is_empty() {
        return Ok(Minimum { params: Vec::new(), loss: f_init, status: OptimStatus::Converged, evaluations: 1 });
    }
    let mut evals = 1;
    let (xq, fq, outcome) = lbfgs(obj, init, opt, &mut evals);
    let (mut best, mut best_f) = if fq.is_finite() && fq <= f_init { (xq, fq) } else { (init.to_vec(), f_init) };
    let status = match outcome {
        QnOutcome::Converged => OptimStatus::Converged,
        QnOutcome::Stalled | QnOutcome::MaxIter | QnOutcome::NonFinite => {
            let (xs, fs, ok) = nelder_mead(obj, &best, opt, &mut evals);
            if fs.is_finite() && fs < best_f {
                best = xs;
                best_f = fs;
            }
            match (outcome, ok) {
                (_, true) => OptimStatus::ConvergedFallback,
                // a stalled line search at a kink with the simplex unable to improve
                (QnOutcome::Stalled, false) => OptimStatus::MaxIter,
                _ => OptimStatus::MaxIter,
            }
        }
    };
    if !best_f.is_finite() {
        return Err(Error::Optimization { reason: "no finite loss found".into(), best, best_loss: best_f });
    }
    Ok(Minimum { params: best, loss: best_f, status, evaluations: evals })
}
