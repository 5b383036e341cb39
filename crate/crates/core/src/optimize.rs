//! Derivative-free minimization: Nelder-Mead simplex and golden-section search.

use serde::{Deserialize, Serialize};

/// Optimizer budget shared by every search in the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerBudget {
    /// Nelder-Mead iterations per restart.
    pub max_iterations: usize,
    /// Number of penalized restarts (penalty weight ×10 each time).
    pub restarts: usize,
    /// Maximum polynomial degree of analytic discs.
    pub degree: usize,
    pub seed: u64,
}

impl Default for OptimizerBudget {
    fn default() -> Self {
        Self { max_iterations: 300, restarts: 8, degree: crate::discs::DEFAULT_MAX_DEGREE, seed: 0 }
    }
}

impl OptimizerBudget {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }
}

#[derive(Clone, Debug)]
pub struct NelderMead {
    pub max_iterations: usize,
    /// Stop once the spread of simplex values falls below this.
    pub f_tol: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_iterations: 500, f_tol: 1e-12, reflection: 1.0, expansion: 2.0, contraction: 0.5, shrink: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

impl NelderMead {
    /// Minimizes `f` from `x0`, building the initial simplex by stepping
    /// `step[i]` along each axis. NaN values are treated as +∞.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64], step: &[f64]) -> NmResult {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        if n == 0 {
            let v = eval(x0, &mut evals);
            return NmResult { x: vec![], value: v, iterations: 0, evaluations: evals };
        }
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = eval(x0, &mut evals);
        simplex.push((x0.to_vec(), v0));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += step[i];
            let v = eval(&x, &mut evals);
            simplex.push((x, v));
        }
        let mut iterations = 0;
        while iterations < self.max_iterations {
            iterations += 1;
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (best, worst) = (simplex[0].1, simplex[n].1);
            if (worst - best).abs() <= self.f_tol * (1.0 + best.abs()) && worst.is_finite() {
                break;
            }
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
            };
            let xr = along(self.reflection);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = along(self.reflection * self.expansion);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(self.reflection * self.contraction);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(-self.contraction);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            let x_best = simplex[0].0.clone();
            for item in simplex.iter_mut().skip(1) {
                let x: Vec<f64> = x_best.iter().zip(&item.0).map(|(b, w)| b + self.shrink * (w - b)).collect();
                let v = eval(&x, &mut evals);
                *item = (x, v);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        NmResult { x, value, iterations, evaluations: evals }
    }
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
/// Returns `(argmax, max)`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    let mut best = (x, fx);
    for (p, v) in [(c, fc), (d, fd)] {
        if v > best.1 {
            best = (p, v);
        }
    }
    best
}

/// Largest `t` in `[lo, hi]` with `ok(t)`, assuming `ok(lo)` holds and the
/// predicate is monotone (true below a threshold).
pub fn bisect_last_true<F: FnMut(f64) -> bool>(mut ok: F, mut lo: f64, mut hi: f64, iterations: usize) -> f64 {
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let nm = NelderMead { max_iterations: 5000, f_tol: 1e-16, ..Default::default() };
        let r = nm.minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.1, 0.1],
        );
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn nan_is_rejected() {
        let nm = NelderMead::default();
        let r = nm.minimize(|x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) }, &[1.0], &[0.5]);
        assert!((r.x[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn golden_section_finds_peak() {
        let (x, v) = golden_max(|t| -(t - 0.3).powi(2) + 1.0, 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_threshold() {
        let t = bisect_last_true(|t| t * t < 2.0, 0.0, 2.0, 60);
        assert!((t - 2f64.sqrt()).abs() < 1e-12);
    }
}
