//! Scalar Riccati differential inequalities
//! `g' <= -gamma g + sigma g^2 + beta`, their envelope `(1 - nu) / mu`, the
//! closed-form solution of the majorant equation and a numerical check of it.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::integrator::{Dopri5, StepOptions};
use crate::quadrature::adaptive_simpson;
use crate::schedule::{ConditionItem, ConditionReport, EpsilonSchedule};

pub use crate::quadrature::DEFAULT_QUAD_TOL;

/// A coefficient function of time.
pub type Coef = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Majorant samples are declared blown up once `g` exceeds this multiple of `1/mu`.
pub const BLOWUP_FACTOR: f64 = 10.0;

pub const RC_SIGMA: &str = "0 <= sigma <= (mu/2)(gamma - mu'/mu)";
pub const RC_BETA: &str = "0 <= beta <= (gamma - mu'/mu)/(2 mu)";
pub const RC_START: &str = "g0 mu(t0) < 1";
pub const RC_MU: &str = "mu > 0";
pub const RC_MU_DOT: &str = "mu' consistent with mu";

#[derive(Clone)]
pub struct RiccatiSpec {
    pub gamma: Coef,
    pub sigma: Coef,
    pub beta: Coef,
    pub mu: Coef,
    /// Must be the derivative of `mu`; `check_conditions` verifies this by finite differences.
    pub mu_dot: Coef,
    pub t0: f64,
    pub g0: f64,
    pub label: String,
}

impl fmt::Debug for RiccatiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RiccatiSpec")
            .field("label", &self.label)
            .field("t0", &self.t0)
            .field("g0", &self.g0)
            .finish_non_exhaustive()
    }
}

fn coef(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Coef {
    Arc::new(f)
}

impl RiccatiSpec {
    pub fn new(gamma: Coef, sigma: Coef, beta: Coef, mu: Coef, mu_dot: Coef, t0: f64, g0: f64) -> Result<Self> {
        if !t0.is_finite() {
            return Err(DsmError::InvalidParameter(format!("t0 must be finite, got {t0}")));
        }
        if !(g0 >= 0.0) || !g0.is_finite() {
            return Err(DsmError::InvalidParameter(format!("g0 must be finite and >= 0, got {g0}")));
        }
        if !(mu(t0) > 0.0) {
            return Err(DsmError::InvalidParameter("mu(t0) must be > 0".into()));
        }
        Ok(Self { gamma, sigma, beta, mu, mu_dot, t0, g0, label: String::from("custom") })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_g0(mut self, g0: f64) -> Result<Self> {
        if !(g0 >= 0.0) || !g0.is_finite() {
            return Err(DsmError::InvalidParameter(format!("g0 must be finite and >= 0, got {g0}")));
        }
        self.g0 = g0;
        Ok(self)
    }

    /// The instantiation for the DSM deviation `g = |u - V|`:
    /// `gamma = 1`, `sigma = M / (2 eps)`, `beta = |y| |eps'| / eps`, `mu = 2 M / eps`.
    pub fn dsm(schedule: &EpsilonSchedule, m: f64, y_norm_bound: f64, g0: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(DsmError::InvalidParameter(format!(
                "the Riccati instantiation needs M > 0 (got {m}); use LinearEnvelope for M = 0"
            )));
        }
        if !(y_norm_bound >= 0.0) {
            return Err(DsmError::InvalidParameter(format!("y_norm_bound must be >= 0, got {y_norm_bound}")));
        }
        let s = *schedule;
        Self::new(
            coef(|_| 1.0),
            coef(move |t| 0.5 * m / s.eps(t)),
            coef(move |t| y_norm_bound * s.eps_dot(t).abs() / s.eps(t)),
            coef(move |t| 2.0 * m / s.eps(t)),
            coef(move |t| 2.0 * m * s.eps_dot(t).abs() / (s.eps(t) * s.eps(t))),
            0.0,
            g0,
        )
        .map(|spec| spec.with_label("dsm"))
    }

    /// `sigma` and `beta` set to their largest admissible values, which turns
    /// the envelope into the exact solution of the majorant equation.
    pub fn saturated(gamma: Coef, mu: Coef, mu_dot: Coef, t0: f64, g0: f64) -> Result<Self> {
        let gap = {
            let (gamma, mu, mu_dot) = (gamma.clone(), mu.clone(), mu_dot.clone());
            move |t: f64| gamma(t) - mu_dot(t) / mu(t)
        };
        let sigma = {
            let (gap, mu) = (gap.clone(), mu.clone());
            coef(move |t| 0.5 * mu(t) * gap(t))
        };
        let beta = {
            let mu = mu.clone();
            coef(move |t| gap(t) / (2.0 * mu(t)))
        };
        Self::new(gamma, sigma, beta, mu, mu_dot, t0, g0).map(|s| s.with_label("saturated"))
    }

    /// Random saturated spec with `gamma = a + c cos(w t)`, `mu = m0 (1 + t - t0)^p`
    /// and `a - |c| >= p + 0.1`, so every condition holds with room to spare.
    pub fn random_valid(rng: &mut impl Rng) -> Self {
        let p = rng.random_range(0.0..0.5);
        let a = rng.random_range(p + 0.2..2.0);
        let c_max = a - p - 0.1;
        let c = rng.random_range(-c_max..c_max);
        let w = rng.random_range(0.5..3.0);
        let m0 = rng.random_range(0.5..2.0);
        let t0 = rng.random_range(0.0..1.0);
        let g0 = rng.random_range(0.0..0.95) / m0;
        let label = format!("gamma={a:.3}{c:+.3}cos({w:.3}t); mu={m0:.3}(1+t-t0)^{p:.3}");
        Self::saturated(
            coef(move |t| a + c * (w * t).cos()),
            coef(move |t| m0 * (1.0 + t - t0).powf(p)),
            coef(move |t| m0 * p * (1.0 + t - t0).powf(p - 1.0)),
            t0,
            g0,
        )
        .expect("random parameters are valid by construction")
        .with_label(label)
    }

    /// `gamma - mu'/mu`.
    pub fn rate_gap(&self, t: f64) -> f64 {
        (self.gamma)(t) - (self.mu_dot)(t) / (self.mu)(t)
    }

    pub fn one_over_mu(&self, t: f64) -> f64 {
        1.0 / (self.mu)(t)
    }

    /// Right-hand side of the majorant equation `-gamma g + sigma g^2 + beta`.
    pub fn majorant_rhs(&self, t: f64, g: f64) -> f64 {
        -(self.gamma)(t) * g + (self.sigma)(t) * g * g + (self.beta)(t)
    }
}

/// Evaluates the three inequalities on `grid` plus positivity of `mu` and
/// consistency of `mu_dot`.
pub fn check_conditions(spec: &RiccatiSpec, grid: &[f64]) -> Result<ConditionReport> {
    if grid.is_empty() || grid[0] != spec.t0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DsmError::InvalidParameter("grid must be increasing and start at t0".into()));
    }
    // worst (value, bound, value / bound) per inequality
    let mut sigma = (0.0, 0.0, f64::NEG_INFINITY);
    let mut beta = sigma;
    let mut mu_min = f64::INFINITY;
    let mut fd_worst = 0.0f64;
    let worst = |slot: &mut (f64, f64, f64), value: f64, bound: f64| {
        let ratio = if value == 0.0 && bound >= 0.0 {
            0.0
        } else if value < 0.0 || !(bound > 0.0) {
            // negative coefficients violate the lower bound
            f64::INFINITY
        } else {
            value / bound
        };
        if ratio > slot.2 || ratio.is_nan() {
            *slot = (if value < 0.0 { f64::INFINITY } else { value }, bound, ratio);
        }
    };
    for &t in grid {
        let mu = (spec.mu)(t);
        mu_min = mu_min.min(mu);
        let gap = spec.rate_gap(t);
        worst(&mut sigma, (spec.sigma)(t), 0.5 * mu * gap);
        worst(&mut beta, (spec.beta)(t), gap / (2.0 * mu));
        let h = 1e-5 * (1.0 + t.abs());
        let fd = ((spec.mu)(t + h) - (spec.mu)(t - h)) / (2.0 * h);
        let md = (spec.mu_dot)(t);
        fd_worst = fd_worst.max((fd - md).abs() / (md.abs() + mu.abs() * 1e-3 + f64::MIN_POSITIVE));
    }
    let start = spec.g0 * (spec.mu)(spec.t0);
    let item = |name, (value, bound, _): (f64, f64, f64)| ConditionItem::new(name, value, bound, false);
    let mu_item =
        ConditionItem { name: RC_MU, value: mu_min, bound: 0.0, margin: mu_min, strict: true, passed: mu_min > 0.0 };
    Ok(ConditionReport::from_items(vec![
        item(RC_SIGMA, sigma),
        item(RC_BETA, beta),
        ConditionItem::new(RC_START, start, 1.0, true),
        mu_item,
        ConditionItem::new(RC_MU_DOT, fd_worst, 1e-4, false),
    ]))
}

/// Envelope quantities at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeSample {
    pub t: f64,
    pub nu: f64,
    /// `(1 - nu) / mu`.
    pub envelope: f64,
    /// Solution of the transformed majorant equation, `e^{int gamma} (1 - nu) / mu`.
    pub closed_form: f64,
    pub one_over_mu: f64,
    pub int_gamma: f64,
}

/// `D - 1` where `nu = 1 / D`, from `int gamma` and `mu(t)`.
fn d_minus_one(spec: &RiccatiSpec, int_gamma: f64, mu_t: f64) -> f64 {
    let p = spec.g0 * (spec.mu)(spec.t0);
    // int mu'/mu = ln(mu(t)/mu(t0)) exactly
    let int_gap = int_gamma - (mu_t / (spec.mu)(spec.t0)).ln();
    p / (1.0 - p) + 0.5 * int_gap
}

fn sample_from_integral(spec: &RiccatiSpec, t: f64, int_gamma: f64) -> Result<EnvelopeSample> {
    let mu_t = (spec.mu)(t);
    let dm1 = d_minus_one(spec, int_gamma, mu_t);
    let d = 1.0 + dm1;
    if !(d > 0.0) || !d.is_finite() {
        return Err(DsmError::InvalidParameter(format!("envelope undefined at t = {t}: nu^-1 = {d}")));
    }
    let one_minus_nu = dm1 / d;
    let envelope = one_minus_nu / mu_t;
    Ok(EnvelopeSample {
        t,
        nu: 1.0 / d,
        envelope,
        closed_form: int_gamma.exp() * envelope,
        one_over_mu: 1.0 / mu_t,
        int_gamma,
    })
}

fn check_start(spec: &RiccatiSpec, t: f64) -> Result<()> {
    if t < spec.t0 {
        return Err(DsmError::InvalidParameter(format!("t = {t} precedes t0 = {}", spec.t0)));
    }
    if !(spec.g0 * (spec.mu)(spec.t0) < 1.0) {
        return Err(DsmError::InvalidParameter("envelope requires g0 mu(t0) < 1".into()));
    }
    Ok(())
}

fn sample(spec: &RiccatiSpec, t: f64, quad_tol: f64) -> Result<EnvelopeSample> {
    check_start(spec, t)?;
    let int_gamma = adaptive_simpson(|s| (spec.gamma)(s), spec.t0, t, quad_tol)?;
    sample_from_integral(spec, t, int_gamma)
}

/// `nu(t) = [1/(1 - mu(t0) g0) + (1/2) int_{t0}^t (gamma - mu'/mu)]^{-1}`.
pub fn nu(spec: &RiccatiSpec, t: f64, quad_tol: f64) -> Result<f64> {
    Ok(sample(spec, t, quad_tol)?.nu)
}

/// `(1 - nu(t)) / mu(t)`, the bound on any solution of the inequality.
pub fn envelope(spec: &RiccatiSpec, t: f64, quad_tol: f64) -> Result<f64> {
    Ok(sample(spec, t, quad_tol)?.envelope)
}

/// Solution at `t` of the transformed majorant equation with value `g0` at `t0`.
pub fn riccati_closed_form(spec: &RiccatiSpec, t: f64, quad_tol: f64) -> Result<f64> {
    Ok(sample(spec, t, quad_tol)?.closed_form)
}

/// Envelope samples at increasing `times >= t0`; `int gamma` accumulates
/// across consecutive times so all samples share one quadrature grid.
pub fn envelope_samples(spec: &RiccatiSpec, times: &[f64], quad_tol: f64) -> Result<Vec<EnvelopeSample>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(DsmError::InvalidParameter("sample times must be nondecreasing".into()));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut last_t = spec.t0;
    let mut int_gamma = 0.0;
    for &t in times {
        check_start(spec, t)?;
        int_gamma += adaptive_simpson(|s| (spec.gamma)(s), last_t, t, quad_tol)?;
        last_t = t;
        out.push(sample_from_integral(spec, t, int_gamma)?);
    }
    Ok(out)
}

/// A point of the numerically integrated majorant next to its closed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MajorantSample {
    pub t: f64,
    pub g: f64,
}

/// Integrates `g' = -gamma g + sigma g^2 + beta` from `(t0, g0)` and samples
/// it at `times`. `tol` is the relative tolerance of the adaptive stepper.
pub fn integrate_majorant(spec: &RiccatiSpec, times: &[f64], tol: f64) -> Result<Vec<MajorantSample>> {
    if times.iter().any(|&t| t < spec.t0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(DsmError::InvalidParameter("sample times must be nondecreasing and >= t0".into()));
    }
    let opts = StepOptions { rel_tol: tol, abs_tol: tol * 1e-3, ..StepOptions::default() };
    let f = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        dy[0] = spec.majorant_rhs(t, y[0]);
        Ok(())
    };
    let mut stepper = Dopri5::new(f, spec.t0, &[spec.g0], opts)?;
    let blown = |t: f64, g: f64| -> Option<DsmError> {
        let limit = BLOWUP_FACTOR / (spec.mu)(t);
        (!(g <= limit)).then_some(DsmError::BlowUp { t, g, limit })
    };
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        while stepper.t() < t {
            match stepper.step(t) {
                Ok(()) => {}
                Err(DsmError::StepSizeCollapse { t, .. }) => {
                    let g = stepper.y()[0];
                    return Err(DsmError::BlowUp { t, g, limit: BLOWUP_FACTOR / (spec.mu)(t) });
                }
                Err(e) => return Err(e),
            }
            if let Some(e) = blown(stepper.t(), stepper.y()[0]) {
                return Err(e);
            }
        }
        out.push(MajorantSample { t, g: stepper.y()[0] });
    }
    Ok(out)
}

/// Result of comparing a sampled `g(t)` with the envelope.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub points: usize,
    /// Largest `g / envelope`.
    pub worst_ratio: f64,
    pub worst_t: f64,
    /// Smallest `envelope (1 + slack) - g`.
    pub worst_margin: f64,
    pub slack: f64,
    pub passed: bool,
}

/// Checks `g(t_i) <= envelope(t_i) (1 + slack)` at every sample.
pub fn comparison_check(
    samples: &[(f64, f64)],
    spec: &RiccatiSpec,
    slack: f64,
    quad_tol: f64,
) -> Result<ComparisonReport> {
    let times: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let env = envelope_samples(spec, &times, quad_tol)?;
    let mut report = ComparisonReport {
        points: samples.len(),
        worst_ratio: 0.0,
        worst_t: spec.t0,
        worst_margin: f64::INFINITY,
        slack,
        passed: true,
    };
    for (&(t, g), e) in samples.iter().zip(&env) {
        let margin = e.envelope * (1.0 + slack) - g;
        let ratio = if e.envelope > 0.0 {
            g / e.envelope
        } else if g > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > report.worst_ratio {
            report.worst_ratio = ratio;
            report.worst_t = t;
        }
        report.worst_margin = report.worst_margin.min(margin);
        if !(margin >= 0.0) {
            report.passed = false;
        }
    }
    Ok(report)
}

/// Bound for the linear inequality `g' <= -g + beta(t)` that the deviation
/// satisfies when `M = 0`: `g0 e^{-(t - t0)} + int_{t0}^t e^{-(t - s)} beta(s) ds`.
#[derive(Clone)]
pub struct LinearEnvelope {
    pub beta: Coef,
    pub t0: f64,
    pub g0: f64,
}

/// Contributions from more than this far in the past are below `e^{-60}`.
const LINEAR_WINDOW: f64 = 60.0;

impl LinearEnvelope {
    pub fn new(beta: Coef, t0: f64, g0: f64) -> Self {
        Self { beta, t0, g0 }
    }

    /// `beta = |y| |eps'| / eps`.
    pub fn dsm(schedule: &EpsilonSchedule, y_norm_bound: f64, g0: f64) -> Self {
        let s = *schedule;
        Self::new(coef(move |t| y_norm_bound * s.eps_dot(t).abs() / s.eps(t)), 0.0, g0)
    }

    pub fn eval(&self, t: f64, quad_tol: f64) -> Result<f64> {
        if t < self.t0 {
            return Err(DsmError::InvalidParameter(format!("t = {t} precedes t0 = {}", self.t0)));
        }
        let lo = self.t0.max(t - LINEAR_WINDOW);
        let forced = adaptive_simpson(|s| (-(t - s)).exp() * (self.beta)(s), lo, t, quad_tol)?;
        Ok(self.g0 * (-(t - self.t0)).exp() + forced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::derive_schedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_spec(g0: f64) -> RiccatiSpec {
        RiccatiSpec::new(coef(|_| 1.0), coef(|_| 0.0), coef(|_| 0.0), coef(|_| 1.0), coef(|_| 0.0), 0.0, g0).unwrap()
    }

    #[test]
    fn nu_and_envelope_constant_mu() {
        let s = constant_spec(0.5);
        assert_eq!(nu(&s, 0.0, 1e-10).unwrap(), 0.5);
        assert!((nu(&s, 4.0, 1e-12).unwrap() - 0.25).abs() < 1e-14);
        for t in [0.3, 1.0, 7.5] {
            assert!((nu(&s, t, 1e-12).unwrap() - 1.0 / (2.0 + 0.5 * t)).abs() < 1e-14);
        }
        assert_eq!(envelope(&s, 0.0, 1e-10).unwrap(), 0.5);
        assert!((envelope(&s, 4.0, 1e-12).unwrap() - 0.75).abs() < 1e-14);
        assert!(envelope(&s, -1.0, 1e-10).is_err());
    }

    #[test]
    fn closed_form_constant_mu() {
        let s = constant_spec(0.5);
        for t in [0.0f64, 0.5, 2.0, 5.0] {
            let expect = t.exp() * (1.0 - 1.0 / (2.0 + 0.5 * t));
            assert!((riccati_closed_form(&s, t, 1e-12).unwrap() - expect).abs() < 1e-12 * expect.max(1.0));
        }
        assert_eq!(riccati_closed_form(&s, 0.0, 1e-10).unwrap(), 0.5);
    }

    #[test]
    fn conditions_trivial_and_violated() {
        let grid: Vec<f64> = (0..50).map(|k| k as f64 * 0.2).collect();
        assert!(check_conditions(&constant_spec(0.5), &grid).unwrap().passed);
        let r = check_conditions(&constant_spec(1.0), &grid).unwrap();
        assert!(!r.get(RC_START).unwrap().passed);
        // mu = e^{2t} grows faster than e^{int gamma}: the gap is negative
        let fast = RiccatiSpec::new(
            coef(|_| 1.0),
            coef(|_| 0.0),
            coef(|_| 0.0),
            coef(|t| (2.0 * t).exp()),
            coef(|t| 2.0 * (2.0 * t).exp()),
            0.0,
            0.1,
        )
        .unwrap();
        let r = check_conditions(&fast, &grid).unwrap();
        assert!(!r.passed);
        assert!(!r.get(RC_SIGMA).unwrap().passed);
        // inconsistent derivative
        let wrong =
            RiccatiSpec::new(coef(|_| 1.0), coef(|_| 0.0), coef(|_| 0.0), coef(|t| 1.0 + t), coef(|_| 0.0), 0.0, 0.1)
                .unwrap();
        assert!(!check_conditions(&wrong, &grid).unwrap().get(RC_MU_DOT).unwrap().passed);
        assert!(check_conditions(&constant_spec(0.5), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dsm_spec_passes_with_analytic_margin() {
        let sch = derive_schedule(1.0, 1.0, 0.5).unwrap();
        let spec = RiccatiSpec::dsm(&sch, 1.0, 1.0, 1.0).unwrap();
        let grid: Vec<f64> = (0..2000).map(|k| k as f64 * 0.05).collect();
        let r = check_conditions(&spec, &grid).unwrap();
        assert!(r.passed, "{r:?}");
        // sigma / ((mu/2)(1 - |eps'|/eps)) = 1 / (2 (1 - rate)) <= 2/3 at t = 0
        let item = r.get(RC_SIGMA).unwrap();
        assert!((item.value / item.bound - 2.0 / 3.0).abs() < 1e-12);
        // beta / bound = 4 M |y| |eps'| / (eps^2 (1 - rate)), half the source condition
        // value 0.5 over 0.75 at t = 0
        let item = r.get(RC_BETA).unwrap();
        assert!((item.value / item.bound - 0.25 / 0.75).abs() < 1e-12);
        for t in [0.0, 1.0, 33.0, 1e4] {
            assert!(((spec.mu)(t).recip() - sch.eps(t) / 2.0).abs() < 1e-15 * sch.eps(t));
        }
        assert!(RiccatiSpec::dsm(&sch, 0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn dsm_nu_bound() {
        let sch = derive_schedule(1.0, 1.0, 0.5).unwrap();
        let spec = RiccatiSpec::dsm(&sch, 1.0, 1.0, 0.8).unwrap();
        let p = 0.8 * 2.0 / 4.0;
        for t in [0.0, 1.0, 10.0, 100.0] {
            let n = nu(&spec, t, 1e-10).unwrap();
            assert!(n <= 1.0 / (1.0 / (1.0 - p) + 0.375 * t) * (1.0 + 1e-12));
            assert!(envelope(&spec, t, 1e-10).unwrap() < sch.eps(t) / 2.0);
        }
    }

    #[test]
    fn linear_majorant_decays_exponentially() {
        let s = constant_spec(1.0);
        let samples = integrate_majorant(&s, &[0.0, 0.5, 1.0, 3.0], 1e-10).unwrap();
        assert_eq!(samples[0].g, 1.0);
        assert!((samples[2].g - (-1.0f64).exp()).abs() < 1e-9);
        assert!((samples[2].g - 0.367879).abs() < 1e-6);
        assert!((samples[3].g - (-3.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn quadratic_blowup_detected() {
        // g' = g^2, g(0) = 1 blows up at t = 1
        let s = RiccatiSpec::new(coef(|_| 0.0), coef(|_| 1.0), coef(|_| 0.0), coef(|_| 1.0), coef(|_| 0.0), 0.0, 1.0)
            .unwrap();
        let err = integrate_majorant(&s, &[0.5, 2.0], 1e-8).unwrap_err();
        match err {
            DsmError::BlowUp { t, .. } => assert!(t > 0.85 && t < 1.0, "t = {t}"),
            other => panic!("expected BlowUp, got {other}"),
        }
        assert!(!check_conditions(&s, &[0.0, 0.5]).unwrap().passed);
    }

    #[test]
    fn saturated_majorant_matches_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let spec = RiccatiSpec::random_valid(&mut rng);
            let times: Vec<f64> = (0..30).map(|k| spec.t0 + k as f64 * 0.3).collect();
            let num = integrate_majorant(&spec, &times, 1e-10).unwrap();
            let env = envelope_samples(&spec, &times, 1e-12).unwrap();
            for (a, e) in num.iter().zip(&env) {
                assert!((a.g - e.envelope).abs() <= 1e-8 * e.envelope.max(1e-3), "{} vs {}", a.g, e.envelope);
                assert!((e.closed_form * (-e.int_gamma).exp() - e.envelope).abs() <= 1e-12 * e.envelope);
            }
        }
    }

    #[test]
    fn envelope_identities_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let spec = RiccatiSpec::random_valid(&mut rng);
            let grid: Vec<f64> = (0..100).map(|k| spec.t0 + k as f64 * 0.1).collect();
            assert!(check_conditions(&spec, &grid).unwrap().passed, "{spec:?}");
            let e0 = envelope(&spec, spec.t0, 1e-10).unwrap();
            assert!((e0 - spec.g0).abs() <= 1e-14 * spec.g0.max(f64::MIN_POSITIVE) + 1e-300);
            let t = spec.t0 + rng.random_range(0.0..20.0);
            assert!(envelope(&spec, t, 1e-10).unwrap() < spec.one_over_mu(t));
        }
    }

    #[test]
    fn larger_g0_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let spec = RiccatiSpec::random_valid(&mut rng);
            let hi = (spec.g0 + 0.5 * (spec.one_over_mu(spec.t0) - spec.g0)).min(0.99 * spec.one_over_mu(spec.t0));
            let bigger = spec.clone().with_g0(hi).unwrap();
            let times: Vec<f64> = (0..20).map(|k| spec.t0 + k as f64 * 0.5).collect();
            let a = envelope_samples(&spec, &times, 1e-10).unwrap();
            let b = envelope_samples(&bigger, &times, 1e-10).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.envelope <= y.envelope));
        }
    }

    #[test]
    fn comparison_passes_for_smaller_start_and_for_envelope_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = RiccatiSpec::random_valid(&mut rng);
        let times: Vec<f64> = (0..40).map(|k| spec.t0 + k as f64 * 0.25).collect();
        let smaller = spec.clone().with_g0(0.5 * spec.g0).unwrap();
        let g: Vec<(f64, f64)> =
            integrate_majorant(&smaller, &times, 1e-10).unwrap().iter().map(|s| (s.t, s.g)).collect();
        let r = comparison_check(&g, &spec, 1e-9, 1e-10).unwrap();
        assert!(r.passed && r.worst_ratio <= 1.0 + 1e-9, "{r:?}");

        let env: Vec<(f64, f64)> =
            envelope_samples(&spec, &times, 1e-10).unwrap().iter().map(|e| (e.t, e.envelope)).collect();
        let r = comparison_check(&env, &spec, 0.0, 1e-10).unwrap();
        assert!(r.passed && r.worst_margin.abs() < 1e-15);

        let too_big: Vec<(f64, f64)> = env.iter().map(|&(t, g)| (t, 1.2 * g + 1e-3)).collect();
        assert!(!comparison_check(&too_big, &spec, 0.05, 1e-10).unwrap().passed);
    }

    #[test]
    fn dsm_majorant_stays_below_envelope() {
        let sch = derive_schedule(1.0, 1.0, 0.5).unwrap();
        let env0 = envelope(&RiccatiSpec::dsm(&sch, 1.0, 1.0, 0.0).unwrap(), 0.0, 1e-10).unwrap();
        assert_eq!(env0, 0.0);
        let g0 = 0.5 * 0.5; // half of the starting envelope for g0 = 0.5
        let spec = RiccatiSpec::dsm(&sch, 1.0, 1.0, g0).unwrap();
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 0.5).collect();
        let g = integrate_majorant(&spec, &times, 1e-10).unwrap();
        let samples: Vec<(f64, f64)> = g.iter().map(|s| (s.t, s.g)).collect();
        assert!(comparison_check(&samples, &spec, 0.0, 1e-10).unwrap().passed);
    }

    #[test]
    fn linear_envelope_oracle() {
        // constant beta: g0 e^{-t} + beta (1 - e^{-t})
        let l = LinearEnvelope::new(coef(|_| 0.3), 0.0, 2.0);
        for t in [0.0f64, 1.0, 5.0, 100.0] {
            let expect = 2.0 * (-t).exp() + 0.3 * (1.0 - (-t).exp());
            assert!((l.eval(t, 1e-12).unwrap() - expect).abs() < 1e-10);
        }
        let sch = derive_schedule(1.0, 1.0, 0.5).unwrap();
        let l = LinearEnvelope::dsm(&sch, 1.0, 0.0);
        // beta decreases, so the bound is below the running max of beta
        assert!(l.eval(50.0, 1e-10).unwrap() <= 0.25 / 52.0 * 52.0 / 2.0);
        assert!(l.eval(-1.0, 1e-10).is_err());
    }
}
