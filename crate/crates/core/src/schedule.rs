//! The regularizer `eps(t) = c1 (c0 + t)^(-b)` and the constraints placed on
//! its constants.

use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::linalg::Vector;
use crate::operator::OperatorProblem;

/// Standing bound on the logarithmic decay rate `|eps'| / eps`.
pub const MAX_LOG_RATE: f64 = 0.25;

/// Relative slack used when comparing analytically equal quantities.
const ROUNDING: f64 = 1e-12;

/// Problem data a schedule was derived from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Derivation {
    /// The constant `M` that fixed `eps(0) = 4 M r`.
    pub m: f64,
    /// Second-derivative bound `M_2(3r)` of the problem (0 for linear problems).
    pub m2: f64,
    /// `r = y_norm_bound + |u0|`.
    pub r: f64,
    pub u0_norm: f64,
    pub y_norm_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsilonSchedule {
    c1: f64,
    c0: f64,
    b: f64,
    derivation: Option<Derivation>,
}

impl EpsilonSchedule {
    pub fn new(c1: f64, c0: f64, b: f64) -> Result<Self> {
        if !(c1 > 0.0) || !c1.is_finite() {
            return Err(DsmError::InvalidParameter(format!("c1 must be > 0, got {c1}")));
        }
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(DsmError::InvalidParameter(format!("c0 must be > 0, got {c0}")));
        }
        if !(b > 0.0 && b < 1.0) {
            return Err(DsmError::InvalidParameter(format!("b must lie in (0, 1), got {b}")));
        }
        Ok(Self { c1, c0, b, derivation: None })
    }

    /// Schedule with `c0 = 4b` (so `b / c0 = 1/4`) and the given `eps(0)`.
    pub fn from_initial(eps0: f64, b: f64) -> Result<Self> {
        if !(b > 0.0 && b < 1.0) {
            return Err(DsmError::InvalidParameter(format!("b must lie in (0, 1), got {b}")));
        }
        let c0 = 4.0 * b;
        Self::new(eps0 * c0.powf(b), c0, b)
    }

    pub fn with_derivation(mut self, derivation: Derivation) -> Self {
        self.derivation = Some(derivation);
        self
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn derivation(&self) -> Option<&Derivation> {
        self.derivation.as_ref()
    }

    pub fn eps(&self, t: f64) -> f64 {
        self.c1 * (self.c0 + t).powf(-self.b)
    }

    pub fn eps_dot(&self, t: f64) -> f64 {
        -self.b * self.c1 * (self.c0 + t).powf(-self.b - 1.0)
    }

    pub fn eps0(&self) -> f64 {
        self.eps(0.0)
    }

    /// `|eps'(t)| / eps(t) = b / (c0 + t)`.
    pub fn log_rate(&self, t: f64) -> f64 {
        self.b / (self.c0 + t)
    }

    /// `|eps'(t)| / eps(t)^2`, maximal at `t = 0`.
    pub fn rate_over_eps(&self, t: f64) -> f64 {
        self.b * (self.c0 + t).powf(self.b - 1.0) / self.c1
    }

    /// Time at which `eps` reaches `target`; 0 when `target >= eps(0)`.
    pub fn time_for_eps(&self, target: f64) -> Result<f64> {
        if !(target > 0.0) {
            return Err(DsmError::InvalidParameter(format!("target eps must be > 0, got {target}")));
        }
        Ok(((self.c1 / target).powf(1.0 / self.b) - self.c0).max(0.0))
    }
}

/// `c0 = 4b` and `c1 = 4 M r c0^b`, so that `eps(0) = 4 M r` and `b / c0 = 1/4`.
pub fn derive_schedule(m: f64, r: f64, b: f64) -> Result<EpsilonSchedule> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(DsmError::InvalidParameter(format!("M must be > 0, got {m}")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(DsmError::InvalidParameter(format!("r must be > 0, got {r}")));
    }
    Ok(EpsilonSchedule::from_initial(4.0 * m * r, b)?.with_derivation(Derivation {
        m,
        m2: m,
        r,
        u0_norm: f64::NAN,
        y_norm_bound: f64::NAN,
    }))
}

/// Derives a schedule for `problem` started at `u0`.
///
/// `r = y_norm_bound + |u0|` and `M = M_2(3r)` over `B(u0, 3r)`. Linear
/// problems have `M_2 = 0`; `m_floor` then stands in for `M` when fixing `eps(0)`.
pub fn derive_for_problem(
    problem: &OperatorProblem,
    u0: &Vector,
    y_norm_bound: f64,
    b: f64,
    m_floor: f64,
) -> Result<EpsilonSchedule> {
    if !(y_norm_bound >= 0.0) {
        return Err(DsmError::InvalidParameter(format!("y_norm_bound must be >= 0, got {y_norm_bound}")));
    }
    let u0_norm = u0.norm();
    let r = y_norm_bound + u0_norm;
    let m2 = problem.bounds(u0, 3.0 * r).m2;
    let m = if m2 > 0.0 { m2 } else { m_floor };
    let s = derive_schedule(m, r, b)?;
    Ok(s.with_derivation(Derivation { m, m2, r, u0_norm, y_norm_bound }))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionItem {
    pub name: &'static str,
    /// Worst case over `t >= 0` of the constrained quantity.
    pub value: f64,
    pub bound: f64,
    /// `bound - value`.
    pub margin: f64,
    pub strict: bool,
    pub passed: bool,
}

impl ConditionItem {
    pub(crate) fn new(name: &'static str, value: f64, bound: f64, strict: bool) -> Self {
        let passed = if strict { value < bound } else { value <= bound * (1.0 + ROUNDING) };
        Self { name, value, bound, margin: bound - value, strict, passed }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub items: Vec<ConditionItem>,
    pub passed: bool,
}

impl ConditionReport {
    pub(crate) fn from_items(items: Vec<ConditionItem>) -> Self {
        let passed = items.iter().all(|c| c.passed);
        Self { items, passed }
    }

    pub fn get(&self, name: &str) -> Option<&ConditionItem> {
        self.items.iter().find(|c| c.name == name)
    }
}

pub const STANDING_RATE: &str = "standing: sup |eps'|/eps <= 1/4";
pub const COND_RATE: &str = "(i) sup |eps'|/eps < 1/2";
pub const COND_SOURCE: &str = "(ii) sup 8 M |y| |eps'| / eps^2 <= 1";
pub const COND_START: &str = "(iii) 2 M r / eps(0) < 1";

/// Worst-case values over `t >= 0` of the three schedule conditions plus the
/// standing rate bound. All suprema are attained at `t = 0`. With `m = 0`
/// (linear problems) the two `M`-conditions hold vacuously.
pub fn validate_conditions(s: &EpsilonSchedule, m: f64, r: f64, y_norm_bound: f64) -> ConditionReport {
    let rate = s.log_rate(0.0);
    let source = 8.0 * m * y_norm_bound * s.rate_over_eps(0.0);
    let start = 2.0 * m * r / s.eps0();
    ConditionReport::from_items(vec![
        ConditionItem::new(STANDING_RATE, rate, MAX_LOG_RATE, false),
        ConditionItem::new(COND_RATE, rate, 0.5, true),
        ConditionItem::new(COND_SOURCE, source, 1.0, false),
        ConditionItem::new(COND_START, start, 1.0, true),
    ])
}
