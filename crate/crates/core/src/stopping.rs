//! Stopping the flow at `t_delta`, the root of `eps(t)^2 = 16 M delta`, when
//! the data carry noise of size `delta`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::flow::{integrate_noisy, FlowConfig, Trajectory};
use crate::linalg::Vector;
use crate::operator::{unit_gaussian_direction, OperatorProblem};
use crate::path::solve_v;
use crate::schedule::EpsilonSchedule;

/// Allowed relative increase of the error between consecutive (decreasing) noise levels.
pub const SWEEP_SLACK: f64 = 0.2;
/// Slack on `g_delta < eps / (2M)`.
pub const NOISY_ENVELOPE_SLACK: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StoppingRule {
    m: f64,
    schedule: EpsilonSchedule,
}

impl StoppingRule {
    /// `m` is `M_2` for nonlinear problems or a configured floor for linear ones.
    pub fn new(m: f64, schedule: EpsilonSchedule) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(DsmError::InvalidParameter(format!("stopping rule needs M > 0, got {m}")));
        }
        Ok(Self { m, schedule })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn schedule(&self) -> &EpsilonSchedule {
        &self.schedule
    }

    /// Largest noise level with a finite stopping time, `eps(0)^2 / (16 M)`.
    pub fn max_delta(&self) -> f64 {
        let e0 = self.schedule.eps0();
        e0 * e0 / (16.0 * self.m)
    }

    /// `t_delta = (c1 / sqrt(16 M delta))^(1/b) - c0`. `delta = 0` gives `+inf`.
    pub fn stopping_time(&self, delta: f64) -> Result<f64> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(DsmError::InvalidParameter(format!("delta must be >= 0, got {delta}")));
        }
        if delta == 0.0 {
            return Ok(f64::INFINITY);
        }
        let max_delta = self.max_delta();
        if delta > max_delta {
            return Err(DsmError::NoFiniteStop { delta, max_delta });
        }
        let s = &self.schedule;
        let t = (s.c1() / (16.0 * self.m * delta).sqrt()).powf(1.0 / s.b()) - s.c0();
        // at delta = max_delta the root is 0 up to rounding
        Ok(t.max(0.0))
    }
}

/// Outcome of one stopped noisy run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub t_delta: f64,
    /// `|u_delta(t_delta) - y|`.
    pub error_at_stop: f64,
    /// `|u_delta(t_delta) - V(t_delta)|`.
    pub g_delta_at_stop: f64,
    /// `|V(t_delta) - y|`.
    pub v_at_stop: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    /// Sorted by decreasing `delta`.
    pub rows: Vec<SweepRow>,
    pub seed: u64,
    pub slack: f64,
    /// `None` for a single noise level.
    pub monotone: Option<bool>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.monotone.unwrap_or(true)
    }
}

/// Runs the noisy flow with `delta * noise` to `t_delta` and measures the error.
pub fn run_stopped(
    problem: &OperatorProblem,
    rule: &StoppingRule,
    u0: &Vector,
    delta: f64,
    noise: &Vector,
    cfg: &FlowConfig,
) -> Result<SweepRow> {
    let y = problem
        .known_solution()
        .ok_or_else(|| DsmError::InvalidParameter(format!("problem '{}' has no known solution", problem.name())))?;
    if !(delta > 0.0) {
        return Err(DsmError::InvalidParameter(format!("delta must be > 0, got {delta}")));
    }
    let t_delta = rule.stopping_time(delta)?;
    let u_stop = if t_delta > 0.0 {
        let mut run_cfg = *cfg;
        run_cfg.t_end = t_delta;
        run_cfg.path_diagnostics = false;
        run_cfg.record_stride = usize::MAX;
        let traj = integrate_noisy(problem, rule.schedule(), u0, delta, noise, &run_cfg)?;
        traj.final_state().clone()
    } else {
        u0.clone()
    };
    let v = solve_v(problem, rule.schedule().eps(t_delta), &u_stop, &cfg.newton)?;
    Ok(SweepRow {
        delta,
        t_delta,
        error_at_stop: u_stop.distance(y),
        g_delta_at_stop: u_stop.distance(&v.solution),
        v_at_stop: v.solution.distance(y),
    })
}

/// Stopped noisy runs for every `delta`, each with its own unit noise direction
/// drawn in order of decreasing `delta` from a generator seeded with `seed`.
/// Runs execute in parallel; the report does not depend on scheduling.
pub fn delta_sweep(
    problem: &OperatorProblem,
    rule: &StoppingRule,
    u0: &Vector,
    deltas: &[f64],
    seed: u64,
    cfg: &FlowConfig,
) -> Result<SweepReport> {
    if deltas.is_empty() {
        return Err(DsmError::InvalidParameter("delta sweep needs at least one delta".into()));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noises: Vec<Vector> = sorted.iter().map(|_| unit_gaussian_direction(&mut rng, problem.data_dim())).collect();

    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = sorted
            .iter()
            .zip(&noises)
            .map(|(&delta, noise)| scope.spawn(move || run_stopped(problem, rule, u0, delta, noise, cfg)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect::<Result<Vec<_>>>()
    })?;

    let monotone = (rows.len() > 1)
        .then(|| rows.windows(2).all(|w| w[1].error_at_stop <= w[0].error_at_stop * (1.0 + SWEEP_SLACK)));
    Ok(SweepReport { rows, seed, slack: SWEEP_SLACK, monotone })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NoisyEnvelopeReport {
    pub t_delta: f64,
    /// Recorded times with `t <= t_delta`.
    pub checked: usize,
    /// Largest `g_delta / (eps / 2M)`.
    pub worst_ratio: f64,
    pub worst_t: f64,
    pub passed: bool,
}

/// Checks `g_delta(t) < eps(t) / (2M) (1 + 5%)` at recorded times up to `t_delta`.
pub fn noisy_envelope_check(traj: &Trajectory, rule: &StoppingRule, delta: f64) -> Result<NoisyEnvelopeReport> {
    let t_delta = rule.stopping_time(delta)?;
    let mut report = NoisyEnvelopeReport { t_delta, checked: 0, worst_ratio: 0.0, worst_t: 0.0, passed: true };
    for (&t, d) in traj.times.iter().zip(&traj.diagnostics) {
        if t > t_delta {
            continue;
        }
        let g =
            d.g.ok_or_else(|| DsmError::InvalidParameter("trajectory was recorded without path diagnostics".into()))?;
        let ratio = g / (rule.schedule().eps(t) / (2.0 * rule.m()));
        report.checked += 1;
        if ratio > report.worst_ratio {
            report.worst_ratio = ratio;
            report.worst_t = t;
        }
        if !(ratio < 1.0 + NOISY_ENVELOPE_SLACK) {
            report.passed = false;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::integrate;
    use crate::operator::{cubic_default_solution, cubic_with_solution, make_diagonal_problem};
    use crate::schedule::derive_for_problem;
    use proptest::prelude::*;

    fn example_rule() -> StoppingRule {
        StoppingRule::new(1.0, EpsilonSchedule::new(1.0, 2.0, 0.5).unwrap()).unwrap()
    }

    #[test]
    fn stopping_time_examples() {
        let rule = example_rule();
        let t = rule.stopping_time(1e-4).unwrap();
        assert!((t - 623.0).abs() < 1e-10);
        let eps = rule.schedule().eps(t);
        assert!((eps * eps / (16.0 * 1e-4) - 1.0).abs() < 1e-12);
        assert_eq!(rule.stopping_time(rule.max_delta()).unwrap(), 0.0);
        assert!(rule.stopping_time(0.5e-4).unwrap() > t);
        assert_eq!(rule.stopping_time(0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn stopping_time_errors() {
        let rule = example_rule();
        assert!(matches!(rule.stopping_time(rule.max_delta() * 1.01), Err(DsmError::NoFiniteStop { .. })));
        assert!(rule.stopping_time(-1.0).is_err());
        assert!(StoppingRule::new(0.0, *rule.schedule()).is_err());
    }

    proptest! {
        #[test]
        fn stopping_time_is_root(b in 0.05f64..0.95, c0 in 0.5f64..10.0, c1 in 0.1f64..10.0, m in 0.01f64..10.0, frac in -12.0f64..0.0) {
            let rule = StoppingRule::new(m, EpsilonSchedule::new(c1, c0, b).unwrap()).unwrap();
            let delta = rule.max_delta() * 10f64.powf(frac);
            let t = rule.stopping_time(delta).unwrap();
            let eps = rule.schedule().eps(t);
            prop_assert!(t >= 0.0);
            if t > 1e-6 * c0 {
                prop_assert!((eps * eps / (16.0 * m * delta) - 1.0).abs() < 1e-12 / b);
            }
            // eps^2 >= 16 M delta on [0, t_delta]
            for k in 0..=10 {
                let e = rule.schedule().eps(t * k as f64 / 10.0);
                prop_assert!(e * e >= 16.0 * m * delta * (1.0 - 1e-12 / b));
            }
            prop_assert!(rule.stopping_time(0.5 * delta).unwrap() > t);
        }
    }

    fn diag() -> (OperatorProblem, StoppingRule) {
        let p =
            make_diagonal_problem(&[1.0, 0.1, 0.01], &Vector::from(vec![1.0, 1.0, 1.0])).unwrap().to_problem().unwrap();
        let s = EpsilonSchedule::from_initial(1.0, 0.9).unwrap();
        (p, StoppingRule::new(1e-3, s).unwrap())
    }

    #[test]
    fn zero_noise_matches_exact_run() {
        let (p, rule) = diag();
        let u0 = Vector::zeros(3);
        let cfg = FlowConfig::new(1.0);
        let row = run_stopped(&p, &rule, &u0, 1e-2, &Vector::zeros(3), &cfg).unwrap();
        let mut exact_cfg = cfg;
        exact_cfg.t_end = row.t_delta;
        let exact = integrate(&p, rule.schedule(), &u0, &exact_cfg).unwrap();
        assert_eq!(row.error_at_stop, exact.final_state().distance(p.known_solution().unwrap()));
    }

    #[test]
    fn sweep_single_delta_and_determinism() {
        let (p, rule) = diag();
        let u0 = Vector::zeros(3);
        let cfg = FlowConfig::new(1.0);
        let one = delta_sweep(&p, &rule, &u0, &[1e-2], 3, &cfg).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.monotone, None);
        assert!(one.passed());
        let a = delta_sweep(&p, &rule, &u0, &[1e-3, 1e-2], 9, &cfg).unwrap();
        let b = delta_sweep(&p, &rule, &u0, &[1e-2, 1e-3], 9, &cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows[0].delta, 1e-2);
        assert!(delta_sweep(&p, &rule, &u0, &[], 9, &cfg).is_err());
    }

    #[test]
    fn sweep_requires_known_solution() {
        let (p, rule) = diag();
        let bare = OperatorProblem::new("bare", p.map().clone(), p.rhs().clone()).unwrap();
        assert!(delta_sweep(&bare, &rule, &Vector::zeros(3), &[1e-2], 0, &FlowConfig::new(1.0)).is_err());
    }

    #[test]
    fn noisy_envelope_on_cubic() {
        let y = cubic_default_solution(6);
        let p = cubic_with_solution(1.0, &y).unwrap();
        let u0 = Vector::zeros(6);
        let s = derive_for_problem(&p, &u0, y.norm(), 0.5, 1.0).unwrap();
        let rule = StoppingRule::new(s.derivation().unwrap().m, s).unwrap();
        let delta = 1e-3 * rule.max_delta();
        let t_delta = rule.stopping_time(delta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = unit_gaussian_direction(&mut rng, 6);
        let cfg = FlowConfig::new(t_delta * 1.2);
        let traj = integrate_noisy(&p, &s, &u0, delta, &noise, &cfg).unwrap();
        let r = noisy_envelope_check(&traj, &rule, delta).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checked > 1 && r.checked < traj.len());

        let exact = integrate(&p, &s, &u0, &cfg).unwrap();
        let r0 = noisy_envelope_check(&exact, &rule, 0.0).unwrap();
        assert_eq!(r0.checked, exact.len());
        assert!(r0.passed);

        let bare = integrate(&p, &s, &u0, &cfg.with_path_diagnostics(false)).unwrap();
        assert!(noisy_envelope_check(&bare, &rule, delta).is_err());
    }
}
