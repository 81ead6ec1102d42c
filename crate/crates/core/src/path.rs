//! The regularized path `V(t)`: the solution of `F(V) + eps(t) V = 0`.

use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::linalg::Vector;
use crate::operator::OperatorProblem;
use crate::schedule::EpsilonSchedule;

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    /// Converged when `|F(V) + eps V| <= tol (1 + |V|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Backtracking factor of the Armijo line search.
    pub backtrack: f64,
    pub min_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 100, backtrack: 0.5, min_step: 2f64.powi(-20) }
    }
}

const ARMIJO_C: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct PathPoint {
    pub t: f64,
    pub eps: f64,
    /// `V(t)`.
    pub solution: Vector,
    pub newton_iters: usize,
    /// `|F(V) + eps V|`.
    pub residual: f64,
    /// `|V(t) - y|` when the problem has a known solution.
    pub v: Option<f64>,
}

fn regularized_residual(problem: &OperatorProblem, eps: f64, x: &Vector) -> Result<Vector> {
    let mut g = problem.apply(x)?;
    g.axpy(eps, x);
    Ok(g)
}

/// Solves `F(V) + eps V = 0` by damped Newton iteration from `guess`.
///
/// The returned point has `t = NaN`; [`path`] fills in the time.
pub fn solve_v(problem: &OperatorProblem, eps: f64, guess: &Vector, opts: &NewtonOptions) -> Result<PathPoint> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(DsmError::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    let mut x = guess.clone();
    let mut g = regularized_residual(problem, eps, &x)?;
    let mut res = g.norm();
    let mut iters = 0;
    while res > opts.tol * (1.0 + x.norm()) {
        if iters >= opts.max_iter {
            return Err(DsmError::NoConvergence { iterations: iters, residual: res });
        }
        iters += 1;
        let jac = problem.derivative(&x)?.shifted(eps);
        let dir = -jac.solve(&g)?;

        let mut lambda = 1.0;
        loop {
            let mut trial = x.clone();
            trial.axpy(lambda, &dir);
            let g_trial = regularized_residual(problem, eps, &trial)?;
            let r_trial = g_trial.norm();
            let sufficient = r_trial * r_trial <= (1.0 - 2.0 * ARMIJO_C * lambda) * res * res;
            if sufficient || lambda * opts.backtrack < opts.min_step {
                x = trial;
                g = g_trial;
                res = r_trial;
                break;
            }
            lambda *= opts.backtrack;
        }
    }
    let v = problem.known_solution().map(|y| x.distance(y));
    Ok(PathPoint { t: f64::NAN, eps, solution: x, newton_iters: iters, residual: res, v })
}

/// Solves for `V(t)` at increasing `times`, warm-starting each solve from the
/// previous point. The first solve starts from zero.
pub fn path(
    problem: &OperatorProblem,
    schedule: &EpsilonSchedule,
    times: &[f64],
    opts: &NewtonOptions,
) -> Result<Vec<PathPoint>> {
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.first().is_some_and(|&t| !(t >= 0.0)) {
        return Err(DsmError::InvalidParameter("path times must be increasing and >= 0".into()));
    }
    let mut guess = Vector::zeros(problem.dim());
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let mut p = solve_v(problem, schedule.eps(t), &guess, opts)?;
        p.t = t;
        guess = p.solution.clone();
        out.push(p);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PathBoundMargin {
    pub t: f64,
    /// `|y| (1 + 1e-8) - |V(t)|`.
    pub norm_margin: f64,
    /// Bound minus finite-difference `|V'|` on `[t, t_next]`; absent at the last point.
    pub derivative_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathBoundsReport {
    pub points: Vec<PathBoundMargin>,
    /// `max |V(t)| / |y|`.
    pub max_norm_ratio: f64,
    /// `max` of finite-difference `|V'|` over its bound `|y| |eps'| / eps`.
    pub max_derivative_ratio: f64,
    pub norm_ok: bool,
    pub derivative_ok: bool,
    pub passed: bool,
}

/// Checks `|V(t)| <= |y|` and the finite-difference surrogate of
/// `|V'(t)| <= |y| |eps'(t)| / eps(t)` with relative slack `fd_slack`.
pub fn check_path_bounds(
    points: &[PathPoint],
    schedule: &EpsilonSchedule,
    y_norm: f64,
    fd_slack: f64,
) -> PathBoundsReport {
    let norm_cap = y_norm * (1.0 + 1e-8);
    let mut margins = Vec::with_capacity(points.len());
    let mut max_norm_ratio: f64 = 0.0;
    let mut max_derivative_ratio: f64 = 0.0;
    let mut norm_ok = true;
    let mut derivative_ok = true;
    for (i, p) in points.iter().enumerate() {
        let vn = p.solution.norm();
        norm_ok &= vn <= norm_cap;
        max_norm_ratio = max_norm_ratio.max(if y_norm > 0.0 {
            vn / y_norm
        } else if vn > 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
        let derivative_margin = points.get(i + 1).map(|next| {
            let dt = next.t - p.t;
            let fd = next.solution.distance(&p.solution) / dt;
            // |eps'|/eps = b / (c0 + t) is largest at the left end of the interval
            let bound = y_norm * schedule.log_rate(p.t);
            let cap = bound * (1.0 + fd_slack);
            derivative_ok &= fd <= cap;
            max_derivative_ratio = max_derivative_ratio.max(if bound > 0.0 {
                fd / bound
            } else if fd > 0.0 {
                f64::INFINITY
            } else {
                0.0
            });
            cap - fd
        });
        margins.push(PathBoundMargin { t: p.t, norm_margin: norm_cap - vn, derivative_margin });
    }
    PathBoundsReport {
        points: margins,
        max_norm_ratio,
        max_derivative_ratio,
        norm_ok,
        derivative_ok,
        passed: norm_ok && derivative_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{
        cubic_default_solution, cubic_with_solution, make_cubic_monotone_problem, make_diagonal_problem,
    };
    use crate::schedule::derive_schedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag3() -> OperatorProblem {
        make_diagonal_problem(&[1.0, 0.1, 0.01], &Vector::from(vec![1.0; 3])).unwrap().to_problem().unwrap()
    }

    #[test]
    fn diagonal_closed_form() {
        let p = solve_v(&diag3(), 0.01, &Vector::zeros(3), &NewtonOptions::default()).unwrap();
        let want = [1.0 / 1.01, 0.01 / 0.02, 0.0001 / 0.0101];
        for (got, w) in p.solution.iter().zip(want) {
            assert!((got - w).abs() < 1e-12);
        }
        assert!((p.solution[0] - 0.990099).abs() < 1e-6);
        assert!((p.solution[2] - 0.009901).abs() < 1e-6);
    }

    #[test]
    fn linear_problem_needs_one_newton_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let guess = crate::operator::uniform_in_ball(&mut rng, 3, 10.0);
            let p = solve_v(&diag3(), 0.3, &guess, &NewtonOptions::default()).unwrap();
            assert_eq!(p.newton_iters, 1);
        }
    }

    /// Bisection on `x^3 + x - 1` as the independent oracle.
    fn bisect_cubic_root() -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid * mid + mid - 1.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_cubic_root() {
        let p = make_cubic_monotone_problem(1, 1.0, &Vector::from(vec![1.0])).unwrap();
        let pt = solve_v(&p, 1.0, &Vector::from(vec![5.0]), &NewtonOptions::default()).unwrap();
        let root = bisect_cubic_root();
        assert!((root - 0.682328).abs() < 1e-6);
        assert!((pt.solution[0] - root).abs() < 1e-12);
    }

    #[test]
    fn uniqueness_from_random_guesses() {
        let p = cubic_with_solution(1.0, &cubic_default_solution(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for eps in [10.0, 0.1, 1e-4] {
            let a = solve_v(&p, eps, &crate::operator::uniform_in_ball(&mut rng, 8, 5.0), &NewtonOptions::default())
                .unwrap();
            let b = solve_v(&p, eps, &crate::operator::uniform_in_ball(&mut rng, 8, 5.0), &NewtonOptions::default())
                .unwrap();
            assert!(a.solution.distance(&b.solution) < 1e-8);
            // A(V) + eps I is uniformly positive
            let jac = p.derivative(&a.solution).unwrap().shifted(eps);
            assert!(jac.min_symmetric_eigenvalue().unwrap() >= eps - 1e-10);
        }
    }

    #[test]
    fn rejects_nonpositive_eps() {
        assert!(solve_v(&diag3(), 0.0, &Vector::zeros(3), &NewtonOptions::default()).is_err());
    }

    #[test]
    fn path_distance_decreases_on_diagonal() {
        let p = diag3();
        let s = derive_schedule(1.0, 3f64.sqrt(), 0.5).unwrap();
        let times: Vec<f64> = [1e-1, 1e-3, 1e-5].iter().map(|&e| s.time_for_eps(e).unwrap()).collect();
        let pts = path(&p, &s, &times, &NewtonOptions::default()).unwrap();
        for (pt, &eps) in pts.iter().zip(&[1e-1, 1e-3, 1e-5]) {
            assert!((pt.eps / eps - 1.0).abs() < 1e-10);
            // closed form v(eps) = |(eps / (lambda_i^2 + eps))_i|
            let want = [1.0, 0.01, 1e-4].iter().map(|l2| (eps / (l2 + eps)).powi(2)).sum::<f64>().sqrt();
            assert!((pt.v.unwrap() - want).abs() < 1e-10);
        }
        assert!(pts[0].v > pts[1].v && pts[1].v > pts[2].v);
    }

    #[test]
    fn path_with_zero_data_is_zero() {
        let p = make_diagonal_problem(&[1.0, 0.5], &Vector::zeros(2)).unwrap().to_problem().unwrap();
        let s = derive_schedule(1.0, 1.0, 0.5).unwrap();
        let pts = path(&p, &s, &[0.0, 1.0, 100.0], &NewtonOptions::default()).unwrap();
        for pt in &pts {
            assert_eq!(pt.solution.norm(), 0.0);
        }
        let rep = check_path_bounds(&pts, &s, 0.0, 0.1);
        assert!(rep.passed);
    }

    #[test]
    fn path_rejects_unsorted_times() {
        let s = derive_schedule(1.0, 1.0, 0.5).unwrap();
        assert!(path(&diag3(), &s, &[1.0, 0.5], &NewtonOptions::default()).is_err());
    }

    #[test]
    fn continuation_beats_cold_start() {
        let p = cubic_with_solution(1.0, &cubic_default_solution(10)).unwrap();
        let s = derive_schedule(10.0, 2.0, 0.5).unwrap();
        let times: Vec<f64> = (0..40).map(|k| 10f64.powf(k as f64 * 0.1) - 1.0).collect();
        let opts = NewtonOptions::default();
        let warm: usize = path(&p, &s, &times, &opts).unwrap().iter().map(|q| q.newton_iters).sum();
        let cold: usize =
            times.iter().map(|&t| solve_v(&p, s.eps(t), &Vector::zeros(10), &opts).unwrap().newton_iters).sum();
        assert!(warm <= cold, "warm {warm} cold {cold}");
    }

    #[test]
    fn scalar_bounds_hold() {
        // V(eps) = 1 / (1 + eps) for lambda = 1, y = 1
        let p = make_diagonal_problem(&[1.0], &Vector::from(vec![1.0])).unwrap().to_problem().unwrap();
        let s = derive_schedule(1.0, 1.0, 0.5).unwrap();
        let times: Vec<f64> = (0..60).map(|k| 0.5 * k as f64 * k as f64).collect();
        let pts = path(&p, &s, &times, &NewtonOptions::default()).unwrap();
        for pt in &pts {
            assert!((pt.solution[0] - 1.0 / (1.0 + pt.eps)).abs() < 1e-14);
        }
        let rep = check_path_bounds(&pts, &s, 1.0, 0.1);
        assert!(rep.passed, "{rep:?}");
        assert!(rep.max_norm_ratio < 1.0);
    }

    #[test]
    fn bounds_report_flags_violations() {
        let s = derive_schedule(1.0, 1.0, 0.5).unwrap();
        let mk = |t: f64, x: f64| PathPoint {
            t,
            eps: s.eps(t),
            solution: Vector::from(vec![x]),
            newton_iters: 0,
            residual: 0.0,
            v: None,
        };
        let rep = check_path_bounds(&[mk(0.0, 0.5), mk(1.0, 2.0)], &s, 1.0, 0.1);
        assert!(!rep.norm_ok);
        assert!(!rep.derivative_ok);
        assert!(rep.points[1].norm_margin < 0.0);
    }
}
