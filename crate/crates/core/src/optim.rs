//! Thin wrappers over argmin's Brent and Nelder-Mead solvers.

use argmin::core::{CostFunction, Error, Executor};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;

/// Cost reported for non-finite objective values so the solvers keep moving.
const BAD_COST: f64 = 1e300;

struct Scalar<F>(F);

impl<F: Fn(f64) -> f64> CostFunction for Scalar<F> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> Result<f64, Error> {
        Ok(finite((self.0)(*x)))
    }
}

struct Multi<F>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Multi<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, Error> {
        Ok(finite((self.0)(x)))
    }
}

fn finite(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        BAD_COST
    }
}

/// Minimises `f` on `[lo, hi]` with Brent's method on `brackets` equal
/// sub-intervals, returning the best `(x, f(x))`. The end points are also
/// evaluated since Brent never samples them.
pub fn minimize_scalar<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, brackets: usize) -> (f64, f64) {
    let brackets = brackets.max(1);
    let width = (hi - lo) / brackets as f64;
    let mut best = (lo, finite(f(lo)));
    let end = finite(f(hi));
    if end < best.1 {
        best = (hi, end);
    }
    let problem = Scalar(f);
    let mut problem = Some(problem);
    for b in 0..brackets {
        let a = lo + width * b as f64;
        let z = if b + 1 == brackets { hi } else { a + width };
        let solver = BrentOpt::new(a, z).set_tolerance(1e-8, 1e-10);
        let p = problem.take().expect("problem is returned after each run");
        let res = Executor::new(p, solver)
            .configure(|s| s.max_iters(200))
            .run();
        match res {
            Ok(r) => {
                let x = r.state.best_param.unwrap_or(a);
                let fx = r.state.best_cost;
                if fx < best.1 {
                    best = (x, fx);
                }
                problem = Some(r.problem.problem.expect("executor keeps the problem"));
            }
            Err(_) => unreachable!("cost function never errors"),
        }
    }
    best
}

/// Nelder-Mead from `x0` with an axis-aligned initial simplex of size `step`.
pub fn minimize_simplex<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iters: u64,
) -> (Vec<f64>, f64) {
    let mut simplex = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-9)
        .expect("positive tolerance");
    let fallback = finite(f(x0));
    let res = Executor::new(Multi(f), solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .expect("cost function never errors");
    match res.state.best_param {
        Some(x) if res.state.best_cost <= fallback => (x, res.state.best_cost),
        _ => (x0.to_vec(), fallback),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_quadratic() {
        let (x, fx) = minimize_scalar(|x| (x - 1.3).powi(2) + 2.0, -5.0, 5.0, 3);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_boundary_minimum() {
        let (x, _) = minimize_scalar(|x| x, 0.0, 1.0, 2);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn simplex_rosenbrock() {
        let f = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let (x, fx) = minimize_simplex(f, &[-1.0, 1.5], 0.5, 2000);
        assert!(fx < 1e-8, "{fx}");
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] - 1.0).abs() < 1e-3);
    }
}
