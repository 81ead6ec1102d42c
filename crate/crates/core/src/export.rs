//! CSV writers. Every number is written with 17 significant digits so values
//! survive a round trip bit for bit.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::flow::Trajectory;
use crate::path::PathPoint;
use crate::riccati::{EnvelopeSample, MajorantSample};
use crate::stopping::SweepReport;

/// Formats `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

/// Columns `t, eps, residual, g, v, envelope, dist_from_u0`, then `u_0..u_{n-1}`
/// when `with_state` is set. Missing diagnostics are left empty.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory, with_state: bool) -> Result<()> {
    let mut out = writer(w);
    let mut header: Vec<String> =
        ["t", "eps", "residual", "g", "v", "envelope", "dist_from_u0"].iter().map(|s| s.to_string()).collect();
    let dim = traj.states.first().map_or(0, |u| u.dim());
    if with_state {
        header.extend((0..dim).map(|i| format!("u_{i}")));
    }
    out.write_record(&header)?;
    for ((t, d), u) in traj.times.iter().zip(&traj.diagnostics).zip(&traj.states) {
        let mut row = vec![
            fmt_f64(*t),
            fmt_f64(d.eps),
            fmt_f64(d.residual),
            fmt_opt(d.g),
            fmt_opt(d.v),
            fmt_opt(d.envelope),
            fmt_f64(d.dist_from_u0),
        ];
        if with_state {
            row.extend(u.iter().map(|&x| fmt_f64(x)));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `t, eps, V_norm, v, residual, newton_iters`.
pub fn write_path<W: Write>(w: W, points: &[PathPoint]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["t", "eps", "V_norm", "v", "residual", "newton_iters"])?;
    for p in points {
        out.write_record([
            fmt_f64(p.t),
            fmt_f64(p.eps),
            fmt_f64(p.solution.norm()),
            fmt_opt(p.v),
            fmt_f64(p.residual),
            p.newton_iters.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `t, g_majorant, envelope, one_over_mu`; `majorant` may be shorter
/// than `envelope` (e.g. after a blow-up), leaving the column empty.
pub fn write_riccati<W: Write>(w: W, envelope: &[EnvelopeSample], majorant: &[MajorantSample]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["t", "g_majorant", "envelope", "one_over_mu"])?;
    for (i, e) in envelope.iter().enumerate() {
        let g = majorant.get(i).map(|m| m.g);
        out.write_record([fmt_f64(e.t), fmt_opt(g), fmt_f64(e.envelope), fmt_f64(e.one_over_mu)])?;
    }
    out.flush()?;
    Ok(())
}

/// One row of a closed-form versus numerical comparison.
#[derive(Clone, Debug)]
pub struct OracleRow {
    pub spec: usize,
    pub label: String,
    pub t: f64,
    pub numeric: f64,
    /// Closed form mapped back to the original variable, i.e. the envelope.
    pub closed_form: f64,
    pub rel_err: f64,
}

/// Columns `spec, label, t, numeric, closed_form, rel_err`.
pub fn write_oracle<W: Write>(w: W, rows: &[OracleRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["spec", "label", "t", "numeric", "closed_form", "rel_err"])?;
    for r in rows {
        out.write_record([
            r.spec.to_string(),
            r.label.clone(),
            fmt_f64(r.t),
            fmt_f64(r.numeric),
            fmt_f64(r.closed_form),
            fmt_f64(r.rel_err),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `delta, t_delta, error_at_stop, g_delta_at_stop, v_at_stop`.
pub fn write_sweep<W: Write>(w: W, report: &SweepReport) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["delta", "t_delta", "error_at_stop", "g_delta_at_stop", "v_at_stop"])?;
    for r in &report.rows {
        out.write_record([
            fmt_f64(r.delta),
            fmt_f64(r.t_delta),
            fmt_f64(r.error_at_stop),
            fmt_f64(r.g_delta_at_stop),
            fmt_f64(r.v_at_stop),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Creates (or truncates) `path` and hands the file to `write`.
pub fn to_file(path: impl AsRef<Path>, write: impl FnOnce(File) -> Result<()>) -> Result<()> {
    write(File::create(path)?)
}
