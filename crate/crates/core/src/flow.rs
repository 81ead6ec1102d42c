//! The continuous regularized Newton flow
//! `u' = -(F'(u) + eps(t) I)^{-1} (F(u) + eps(t) u)`, `u(0) = u0`.

use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::integrator::{Dopri5, StepOptions, StepStats};
use crate::linalg::{DenseMatrix, Vector};
use crate::operator::{LinearProblem, OperatorProblem};
use crate::path::{solve_v, NewtonOptions};
use crate::schedule::EpsilonSchedule;

/// Relative slack on the `3r` ball around `u0`.
pub const BALL_SLACK: f64 = 0.1;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FlowConfig {
    pub t_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Record diagnostics every `record_stride` accepted steps (and at `t_end`).
    pub record_stride: usize,
    /// Solve for `V(t)` at every recorded time to report `g` and `v`.
    pub path_diagnostics: bool,
    /// Overrides the `3r` confinement radius taken from a derived schedule.
    pub ball_radius: Option<f64>,
    #[serde(skip)]
    pub newton: NewtonOptions,
}

impl FlowConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 20_000_000,
            record_stride: 1,
            path_diagnostics: true,
            ball_radius: None,
            newton: NewtonOptions::default(),
        }
    }

    /// `t_end` at which `eps(t_end) = target_ratio * eps(0)`.
    pub fn until_eps_ratio(schedule: &EpsilonSchedule, target_ratio: f64) -> Result<Self> {
        Ok(Self::new(schedule.time_for_eps(target_ratio * schedule.eps0())?))
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_path_diagnostics(mut self, on: bool) -> Self {
        self.path_diagnostics = on;
        self
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(DsmError::InvalidParameter(format!("t_end must be > 0, got {}", self.t_end)));
        }
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(DsmError::InvalidParameter("tolerances must be positive".into()));
        }
        if self.max_steps == 0 || self.record_stride == 0 {
            return Err(DsmError::InvalidParameter("max_steps and record_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Diagnostics recorded alongside each stored state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `|F(u(t))|` for the data the flow was driven by.
    pub residual: f64,
    pub eps: f64,
    /// `|u(t) - V(t)|`, `V` the regularized path of the exact-data problem.
    pub g: Option<f64>,
    /// `|V(t) - y|`.
    pub v: Option<f64>,
    /// `eps(t) / (2 M)` when `M = M_2 > 0`.
    pub envelope: Option<f64>,
    pub dist_from_u0: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub diagnostics: Vec<Diagnostics>,
    /// Noise level for trajectories produced by [`integrate_noisy`].
    pub delta: Option<f64>,
    pub stats: StepStats,
    /// `max |u(t) - u0|` over every accepted step.
    pub max_dist_from_u0: f64,
    /// Confinement radius enforced during the run, including slack.
    pub ball_limit: Option<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory holds at least u0")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least u0")
    }

    pub fn final_residual(&self) -> f64 {
        self.diagnostics.last().expect("trajectory holds at least u0").residual
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `-(F'(u) + eps I)^{-1} (F(u) + eps u)`.
pub fn rhs(problem: &OperatorProblem, schedule: &EpsilonSchedule, t: f64, u: &Vector) -> Result<Vector> {
    let eps = schedule.eps(t);
    let mut a = problem.derivative(u)?;
    a.add_to_diagonal(eps);
    let mut num = problem.apply(u)?;
    num.axpy(eps, u);
    Ok(-a.solve(&num)?)
}

/// Linear specialization: `-u + (B + eps I)^{-1} q`.
pub fn rhs_linear(problem: &LinearProblem, schedule: &EpsilonSchedule, t: f64, u: &Vector) -> Result<Vector> {
    if u.dim() != problem.dim() {
        return Err(DsmError::DimensionMismatch { expected: problem.dim(), found: u.dim() });
    }
    let mut out = problem.regularized_solution(schedule.eps(t))?;
    out.axpy(-1.0, u);
    Ok(out)
}

/// Integrates the flow from `u0` over `[0, cfg.t_end]`.
pub fn integrate(
    problem: &OperatorProblem,
    schedule: &EpsilonSchedule,
    u0: &Vector,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    integrate_against(problem, problem, schedule, u0, cfg)
}

/// Integrates the flow driven by noisy data `f + delta * noise`.
///
/// `g` and `v` are still measured against the regularized path of the
/// exact-data problem.
pub fn integrate_noisy(
    problem: &OperatorProblem,
    schedule: &EpsilonSchedule,
    u0: &Vector,
    delta: f64,
    noise: &Vector,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    if noise.norm() > 1.0 + 1e-12 {
        return Err(DsmError::InvalidParameter(format!("noise must lie in the unit ball, |noise| = {}", noise.norm())));
    }
    let noisy = problem.perturbed(delta, noise)?;
    let mut traj = integrate_against(&noisy, problem, schedule, u0, cfg)?;
    traj.delta = Some(delta);
    Ok(traj)
}

/// Integrates `driver`, measuring path diagnostics against `reference`.
fn integrate_against(
    driver: &OperatorProblem,
    reference: &OperatorProblem,
    schedule: &EpsilonSchedule,
    u0: &Vector,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if u0.dim() != driver.dim() {
        return Err(DsmError::DimensionMismatch { expected: driver.dim(), found: u0.dim() });
    }
    let m2 = schedule.derivation().map_or(0.0, |d| d.m2);
    let ball_limit =
        cfg.ball_radius.or_else(|| schedule.derivation().map(|d| 3.0 * d.r)).map(|r| r * (1.0 + BALL_SLACK));

    let mut recorder = Recorder {
        reference,
        schedule,
        cfg,
        u0,
        m2,
        last_v: None,
        traj: Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            diagnostics: Vec::new(),
            delta: None,
            stats: StepStats::default(),
            max_dist_from_u0: 0.0,
            ball_limit,
        },
    };
    recorder.record(driver, 0.0, u0)?;

    let opts = StepOptions {
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
        h_min: 1e-14 * cfg.t_end,
        h_max: f64::INFINITY,
        max_steps: cfg.max_steps,
    };
    let field = Field::new(driver)?;
    let f = |t: f64, y: &[f64], dy: &mut [f64]| field.eval(driver, schedule, t, y, dy);
    let mut stepper = Dopri5::new(f, 0.0, u0.as_slice(), opts)?;
    let mut since_record = 0;
    while stepper.t() < cfg.t_end {
        stepper.step(cfg.t_end)?;
        let t = stepper.t();
        let dist = u0.iter().zip(stepper.y()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        recorder.traj.max_dist_from_u0 = recorder.traj.max_dist_from_u0.max(dist);
        if let Some(limit) = ball_limit {
            if dist > limit {
                return Err(DsmError::BallEscape { t, dist, limit });
            }
        }
        since_record += 1;
        if since_record == cfg.record_stride || t >= cfg.t_end {
            since_record = 0;
            let u = Vector::new(stepper.y().to_vec())?;
            recorder.record(driver, t, &u)?;
        }
    }
    let mut traj = recorder.traj;
    traj.stats = stepper.stats();
    Ok(traj)
}

/// Vector field evaluator. Linear problems with symmetric `B` are diagonalized
/// once, so each evaluation of `-u + (B + eps)^{-1} q` costs a matrix-vector
/// product instead of a factorization.
enum Field {
    General,
    Spectral {
        /// Eigenvectors of `B` as columns.
        basis: DenseMatrix,
        values: Vec<f64>,
        /// `Q^T q` in the eigenbasis.
        q_hat: Vec<f64>,
    },
}

impl Field {
    fn new(problem: &OperatorProblem) -> Result<Self> {
        if !problem.is_linear() {
            return Ok(Self::General);
        }
        let b = problem.derivative(&Vector::zeros(problem.dim()))?;
        if b.asymmetry() > 1e-14 * b.max_abs() {
            return Ok(Self::General);
        }
        let eig = b.symmetric_eigen()?;
        // F(u) = B u - q, so q = -F(0)
        let q = -problem.apply(&Vector::zeros(problem.dim()))?;
        let q_hat = eig.vectors.mul_vec_transposed(&q)?.into_inner();
        let values = eig.values.iter().map(|&l| l.max(0.0)).collect();
        Ok(Self::Spectral { basis: eig.vectors, values, q_hat })
    }

    fn eval(
        &self,
        problem: &OperatorProblem,
        schedule: &EpsilonSchedule,
        t: f64,
        y: &[f64],
        dy: &mut [f64],
    ) -> Result<()> {
        match self {
            Self::General => {
                let du = rhs(problem, schedule, t, &Vector::new(y.to_vec())?)?;
                dy.copy_from_slice(du.as_slice());
            }
            Self::Spectral { basis, values, q_hat } => {
                let eps = schedule.eps(t);
                let n = y.len();
                let data = basis.as_slice();
                dy.copy_from_slice(y);
                dy.iter_mut().for_each(|d| *d = -*d);
                for (k, (&lambda, &qk)) in values.iter().zip(q_hat).enumerate() {
                    let w = qk / (lambda + eps);
                    for (i, d) in dy.iter_mut().enumerate() {
                        *d += data[i * n + k] * w;
                    }
                }
                if dy.iter().any(|d| !d.is_finite()) {
                    return Err(DsmError::NonFinite("flow right-hand side"));
                }
            }
        }
        Ok(())
    }
}

struct Recorder<'a> {
    reference: &'a OperatorProblem,
    schedule: &'a EpsilonSchedule,
    cfg: &'a FlowConfig,
    u0: &'a Vector,
    m2: f64,
    last_v: Option<Vector>,
    traj: Trajectory,
}

impl Recorder<'_> {
    fn record(&mut self, driver: &OperatorProblem, t: f64, u: &Vector) -> Result<()> {
        let eps = self.schedule.eps(t);
        let residual = driver.apply(u)?.norm();
        let (g, v) = if self.cfg.path_diagnostics {
            let guess = self.last_v.as_ref().unwrap_or(u);
            let point = solve_v(self.reference, eps, guess, &self.cfg.newton)?;
            let g = u.distance(&point.solution);
            let v = point.v;
            self.last_v = Some(point.solution);
            (Some(g), v)
        } else {
            (None, None)
        };
        let envelope = (self.m2 > 0.0).then(|| eps / (2.0 * self.m2));
        let dist_from_u0 = u.distance(self.u0);
        self.traj.times.push(t);
        self.traj.states.push(u.clone());
        self.traj.diagnostics.push(Diagnostics { residual, eps, g, v, envelope, dist_from_u0 });
        Ok(())
    }
}
