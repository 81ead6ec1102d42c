//! Adaptive Simpson quadrature.

use crate::error::{DsmError, Result};

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

/// Number of panels the interval is split into before refinement starts, so
/// oscillatory integrands cannot fool the first error estimate.
const INITIAL_PANELS: usize = 16;
const MAX_DEPTH: u32 = 48;

/// `int_a^b f(s) ds` to within `tol * max(1, |integral|)`.
///
/// Returns `QuadratureFailure` if a subinterval still fails the error test at
/// the maximum bisection depth or the integrand is not finite.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(DsmError::InvalidParameter(format!("quadrature tolerance must be > 0, got {tol}")));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(DsmError::QuadratureFailure { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return adaptive_simpson(f, b, a, tol).map(|v| -v);
    }

    let width = (b - a) / INITIAL_PANELS as f64;
    let mut panels = Vec::with_capacity(INITIAL_PANELS);
    let mut coarse = 0.0;
    for k in 0..INITIAL_PANELS {
        let lo = a + k as f64 * width;
        let hi = if k + 1 == INITIAL_PANELS { b } else { lo + width };
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = simpson(lo, hi, fa, fm, fb);
        coarse += whole;
        panels.push((lo, hi, fa, fm, fb, whole));
    }
    if !coarse.is_finite() {
        return Err(DsmError::QuadratureFailure { a, b });
    }
    let abs_tol = tol * coarse.abs().max(1.0);
    let mut total = 0.0;
    for (lo, hi, fa, fm, fb, whole) in panels {
        let share = abs_tol * (hi - lo) / (b - a);
        total += refine(&f, lo, hi, fa, fm, fb, whole, share, MAX_DEPTH)?;
    }
    Ok(total)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(DsmError::QuadratureFailure { a, b });
    }
    if delta.abs() <= 15.0 * tol {
        // Richardson extrapolation
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 || m <= a || m >= b {
        return Err(DsmError::QuadratureFailure { a, b });
    }
    Ok(refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}
