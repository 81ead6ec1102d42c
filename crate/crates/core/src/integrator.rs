//! Adaptive Dormand–Prince 5(4) integrator with FSAL and PI step control.

use crate::error::{DsmError, Result};

#[derive(Clone, Copy, Debug)]
pub struct StepOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Steps shorter than this abort the integration.
    pub h_min: f64,
    pub h_max: f64,
    /// Limit on attempted (accepted + rejected) steps.
    pub max_steps: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-10, h_min: 0.0, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Integrates `y' = f(t, y)`, one accepted step at a time.
pub struct Dopri5<F> {
    f: F,
    opts: StepOptions,
    t: f64,
    y: Vec<f64>,
    h: f64,
    err_old: f64,
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    stats: StepStats,
    last_rejected: bool,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    pub fn new(mut f: F, t0: f64, y0: &[f64], opts: StepOptions) -> Result<Self> {
        if !(opts.rel_tol > 0.0) || !(opts.abs_tol > 0.0) {
            return Err(DsmError::InvalidParameter("integrator tolerances must be positive".into()));
        }
        if opts.max_steps == 0 {
            return Err(DsmError::InvalidParameter("max_steps must be >= 1".into()));
        }
        let n = y0.len();
        let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
        f(t0, y0, &mut k[0])?;
        let mut me = Self {
            f,
            opts,
            t: t0,
            y: y0.to_vec(),
            h: 0.0,
            err_old: 1e-4,
            k,
            y_stage: vec![0.0; n],
            y_new: vec![0.0; n],
            stats: StepStats { evaluations: 1, ..Default::default() },
            last_rejected: false,
        };
        me.h = me.initial_step()?;
        Ok(me)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Derivative at the current point.
    pub fn dy(&self) -> &[f64] {
        &self.k[0]
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.opts.abs_tol + self.opts.rel_tol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> Result<f64> {
        let n = self.y.len();
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..n {
            let sc = self.scale(self.y[i], self.y[i]);
            d0 += (self.y[i] / sc).powi(2);
            d1 += (self.k[0][i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n as f64).sqrt(), (d1 / n as f64).sqrt());
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.opts.h_max);
        for i in 0..n {
            self.y_stage[i] = self.y[i] + h0 * self.k[0][i];
        }
        (self.f)(self.t + h0, &self.y_stage, &mut self.k[1])?;
        self.stats.evaluations += 1;
        let mut d2 = 0.0;
        for i in 0..n {
            let sc = self.scale(self.y[i], self.y[i]);
            d2 += ((self.k[1][i] - self.k[0][i]) / sc).powi(2);
        }
        let d2 = (d2 / n as f64).sqrt() / h0;
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dmax).powf(0.2) };
        Ok((100.0 * h0).min(h1).min(self.opts.h_max).max(self.opts.h_min))
    }

    /// Takes one accepted step without passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<()> {
        let n = self.y.len();
        loop {
            if self.stats.accepted + self.stats.rejected >= self.opts.max_steps {
                return Err(DsmError::MaxStepsExceeded { steps: self.opts.max_steps, t: self.t });
            }
            let remaining = t_limit - self.t;
            if !(remaining > 0.0) {
                return Ok(());
            }
            let mut h = self.h.min(self.opts.h_max);
            let mut last = false;
            if h >= remaining * (1.0 - 1e-12) {
                h = remaining;
                last = true;
            } else if self.h < self.opts.h_min {
                return Err(DsmError::StepSizeCollapse { t: self.t, h: self.h });
            }

            let t = self.t;
            let f = &mut self.f;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let (y, ys) = (&self.y, &mut self.y_stage);

            for i in 0..n {
                ys[i] = y[i] + h * A21 * k1[i];
            }
            f(t + C2 * h, ys, k2)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h, ys, k3)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h, ys, k4)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h, ys, k5)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(t + h, ys, k6)?;
            let yn = &mut self.y_new;
            for i in 0..n {
                yn[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            let t_new = if last { t_limit } else { t + h };
            f(t_new, yn, k7)?;
            self.stats.evaluations += 6;

            let mut err = 0.0;
            for i in 0..n {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.opts.abs_tol + self.opts.rel_tol * y[i].abs().max(yn[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();

            if !err.is_finite() || yn.iter().any(|v| !v.is_finite()) {
                self.stats.rejected += 1;
                self.h = h * FAC_MIN;
                self.last_rejected = true;
                continue;
            }

            let fac11 = err.powf(EXPO);
            if err <= 1.0 {
                let fac = (fac11 / self.err_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h / fac;
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                self.err_old = err.max(1e-4);
                self.stats.accepted += 1;
                self.t = t_new;
                std::mem::swap(&mut self.y, &mut self.y_new);
                self.k.swap(0, 6);
                // a clipped final step says nothing about the natural step size
                if !last || h_new > self.h {
                    self.h = h_new;
                }
                self.last_rejected = false;
                return Ok(());
            }
            self.stats.rejected += 1;
            self.h = h / (fac11 / SAFETY).min(1.0 / FAC_MIN);
            self.last_rejected = true;
        }
    }

    /// Steps until `t_end` is reached exactly.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(t_end)?;
        }
        Ok(())
    }
}
