//! Experiment configuration files (TOML) and their resolution into library objects.

use std::fmt;
use std::path::{Path, PathBuf};

use dsm_core::operator::{
    cubic_default_solution, cubic_with_solution, integral_default_solution, make_cubic_monotone_problem,
};
use dsm_core::schedule::Derivation;
use dsm_core::{
    derive_for_problem, make_diagonal_problem, make_integral_problem, validate_conditions, ConditionReport,
    EpsilonSchedule, FlowConfig, OperatorProblem, Vector,
};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Invalid or inconsistent configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    SolveNoisy,
    Path,
    RiccatiVerify,
    DeltaSweep,
}

impl Experiment {
    /// Experiments that integrate the flow and are refused in strict mode
    /// when the schedule conditions fail.
    pub fn runs_flow(self) -> bool {
        matches!(self, Self::Solve | Self::SolveNoisy | Self::DeltaSweep)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub path: PathSection,
    #[serde(default)]
    pub riccati: RiccatiSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemConfig {
    Diagonal {
        singular_values: Vec<f64>,
        solution: Vec<f64>,
    },
    Integral {
        n: usize,
        #[serde(default = "default_kernel_width")]
        kernel_width: f64,
        /// Defaults to a smooth profile in the range of `A^T A`, which makes
        /// it the minimum-norm solution.
        solution: Option<Vec<f64>>,
    },
    Cubic {
        n: usize,
        #[serde(default = "one")]
        alpha: f64,
        /// Either the solution `y` (then `f = B(y)`) or the data `f`, not both.
        solution: Option<Vec<f64>>,
        rhs: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// `c0 = 4b`, `eps(0) = 4 M r`.
    Derived {
        #[serde(default = "half")]
        b: f64,
        /// Defaults to `|y|` when the problem has a known solution.
        y_norm_bound: Option<f64>,
        /// `M` used for linear problems, whose second derivative vanishes.
        #[serde(default = "one")]
        m_floor: f64,
    },
    /// Either `c1` and `c0`, or `eps0` (with `c0 = 4b`).
    Explicit {
        b: f64,
        c1: Option<f64>,
        c0: Option<f64>,
        eps0: Option<f64>,
        y_norm_bound: Option<f64>,
        #[serde(default = "one")]
        m_floor: f64,
    },
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::Derived { b: 0.5, y_norm_bound: None, m_floor: 1.0 }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    /// Initial state; zeros by default.
    pub u0: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    /// `t_end` is chosen so that `eps(t_end) = target_eps_ratio * eps(0)` when not given.
    pub target_eps_ratio: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_steps: Option<usize>,
    pub record_stride: Option<usize>,
    pub path_diagnostics: Option<bool>,
    /// Append the state coordinates to the trajectory CSV.
    #[serde(default)]
    pub write_state: bool,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub delta: Option<f64>,
    /// `M` of the stopping rule for linear problems.
    pub m_floor: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub deltas: Vec<f64>,
    /// `M` of the stopping rule for linear problems.
    #[serde(default = "one")]
    pub m_floor: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { deltas: vec![1e-2, 1e-3, 1e-4], m_floor: 1.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub points: usize,
    /// Last path time; defaults to the flow's `t_end`.
    pub t_max: Option<f64>,
    #[serde(default = "default_fd_slack")]
    pub fd_slack: f64,
}

impl Default for PathSection {
    fn default() -> Self {
        Self { points: 200, t_max: None, fd_slack: 0.1 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiSection {
    pub specs: usize,
    pub samples: usize,
    pub horizon: f64,
    pub tol: f64,
}

impl Default for RiccatiSection {
    fn default() -> Self {
        Self { specs: 20, samples: 50, horizon: 10.0, tol: 1e-9 }
    }
}

fn default_kernel_width() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_fd_slack() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }
}

/// Library objects built from a configuration.
pub struct Resolved {
    pub problem: OperatorProblem,
    pub u0: Vector,
    pub schedule: EpsilonSchedule,
    /// Problem constants the conditions were evaluated with.
    pub derivation: Derivation,
    pub conditions: ConditionReport,
    pub flow: FlowConfig,
    pub write_state: bool,
}

/// Serializable record of what a run actually used.
#[derive(Debug, Serialize)]
pub struct ResolvedSummary {
    pub problem: String,
    pub dim: usize,
    pub c1: f64,
    pub c0: f64,
    pub b: f64,
    pub eps0: f64,
    pub derivation: Derivation,
    pub flow: FlowConfig,
}

impl Resolved {
    pub fn summary(&self) -> ResolvedSummary {
        ResolvedSummary {
            problem: self.problem.name().to_string(),
            dim: self.problem.dim(),
            c1: self.schedule.c1(),
            c0: self.schedule.c0(),
            b: self.schedule.b(),
            eps0: self.schedule.eps0(),
            derivation: self.derivation,
            flow: self.flow,
        }
    }
}

fn vector(values: &[f64], what: &str) -> anyhow::Result<Vector> {
    Vector::new(values.to_vec()).map_err(|e| config_err(format!("{what}: {e}")))
}

pub fn build_problem(cfg: &ProblemConfig) -> anyhow::Result<OperatorProblem> {
    let built = match cfg {
        ProblemConfig::Diagonal { singular_values, solution } => {
            make_diagonal_problem(singular_values, &vector(solution, "problem.solution")?).and_then(|p| p.to_problem())
        }
        ProblemConfig::Integral { n, kernel_width, solution } => {
            let y = match solution {
                Some(y) => vector(y, "problem.solution")?,
                None => {
                    integral_default_solution(*n, *kernel_width).map_err(|e| config_err(format!("problem: {e}")))?
                }
            };
            make_integral_problem(*n, *kernel_width, &y).and_then(|p| p.to_problem())
        }
        ProblemConfig::Cubic { n, alpha, solution, rhs } => match (solution, rhs) {
            (Some(_), Some(_)) => return Err(config_err("problem: give either solution or rhs for cubic, not both")),
            (Some(y), None) => {
                let y = vector(y, "problem.solution")?;
                if y.dim() != *n {
                    return Err(config_err(format!("problem: solution has {} entries, n = {n}", y.dim())));
                }
                cubic_with_solution(*alpha, &y)
            }
            (None, Some(f)) => make_cubic_monotone_problem(*n, *alpha, &vector(f, "problem.rhs")?),
            (None, None) => cubic_with_solution(*alpha, &cubic_default_solution(*n)),
        },
    };
    built.map_err(|e| config_err(format!("problem: {e}")))
}

pub fn resolve(cfg: &ExperimentConfig) -> anyhow::Result<Resolved> {
    let problem = build_problem(&cfg.problem)?;
    let n = problem.dim();
    let u0 = match &cfg.flow.u0 {
        Some(v) => vector(v, "flow.u0")?,
        None => Vector::zeros(n),
    };
    if u0.dim() != n {
        return Err(config_err(format!("flow.u0 has {} entries, problem dimension is {n}", u0.dim())));
    }
    let known_norm = problem.known_solution().map(|y| y.norm());
    let y_bound = |given: Option<f64>| -> anyhow::Result<f64> {
        match given.or(known_norm) {
            Some(v) if v >= 0.0 && v.is_finite() => Ok(v),
            Some(v) => Err(config_err(format!("schedule.y_norm_bound must be >= 0, got {v}"))),
            None => Err(config_err("schedule.y_norm_bound is required when the solution is unknown")),
        }
    };
    let sched_err = |e: dsm_core::DsmError| config_err(format!("schedule: {e}"));

    let schedule = match &cfg.schedule {
        ScheduleConfig::Derived { b, y_norm_bound, m_floor } => {
            derive_for_problem(&problem, &u0, y_bound(*y_norm_bound)?, *b, *m_floor).map_err(sched_err)?
        }
        ScheduleConfig::Explicit { b, c1, c0, eps0, y_norm_bound, m_floor } => {
            let s = match (c1, c0, eps0) {
                (Some(c1), Some(c0), None) => EpsilonSchedule::new(*c1, *c0, *b),
                (None, None, Some(e0)) => EpsilonSchedule::from_initial(*e0, *b),
                _ => return Err(config_err("explicit schedule needs either c1 and c0, or eps0")),
            }
            .map_err(sched_err)?;
            let y_norm_bound = y_bound(*y_norm_bound)?;
            let u0_norm = u0.norm();
            let r = y_norm_bound + u0_norm;
            let m2 = problem.bounds(&u0, 3.0 * r).m2;
            let m = if m2 > 0.0 { m2 } else { *m_floor };
            s.with_derivation(Derivation { m, m2, r, u0_norm, y_norm_bound })
        }
    };
    let derivation = *schedule.derivation().expect("both schedule modes record a derivation");
    // M_2 = 0 makes the M-dependent conditions vacuous
    let conditions = validate_conditions(&schedule, derivation.m2, derivation.r, derivation.y_norm_bound);

    let f = &cfg.flow;
    let t_end = match (f.t_end, f.target_eps_ratio) {
        (Some(_), Some(_)) => return Err(config_err("flow: give t_end or target_eps_ratio, not both")),
        (Some(t), None) => t,
        (None, ratio) => {
            let ratio = ratio.unwrap_or(1e-6);
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(config_err(format!("flow.target_eps_ratio must lie in (0, 1), got {ratio}")));
            }
            schedule.time_for_eps(ratio * schedule.eps0()).map_err(sched_err)?
        }
    };
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(config_err(format!("flow.t_end must be > 0, got {t_end}")));
    }
    let mut flow = FlowConfig::new(t_end);
    flow.rel_tol = f.rel_tol.unwrap_or(flow.rel_tol);
    flow.abs_tol = f.abs_tol.unwrap_or(flow.abs_tol);
    flow.max_steps = f.max_steps.unwrap_or(flow.max_steps);
    flow.record_stride = f.record_stride.unwrap_or(flow.record_stride);
    flow.path_diagnostics = f.path_diagnostics.unwrap_or(flow.path_diagnostics);
    if !(flow.rel_tol > 0.0 && flow.abs_tol > 0.0) || flow.max_steps == 0 || flow.record_stride == 0 {
        return Err(config_err("flow: tolerances must be > 0, max_steps and record_stride >= 1"));
    }

    Ok(Resolved { problem, u0, schedule, derivation, conditions, flow, write_state: f.write_state })
}
