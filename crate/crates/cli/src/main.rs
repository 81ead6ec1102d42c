#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dsm_core::{ConditionReport, DsmError};
use serde_json::json;

use config::{ConfigError, ExperimentConfig};
use experiments::VerificationFailed;

#[derive(Parser)]
#[command(name = "dsm", version, about = "Run continuous regularized Newton flow experiments")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// List the built-in problems and their parameters.
    ListProblems {
        /// Print the listing as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides the config's output_dir).
    #[arg(long, value_name = "DIR", env = "DSM_OUTPUT_DIR")]
    output: Option<PathBuf>,
    /// Seed for noise and random specs (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Refuse flow experiments whose schedule fails the conditions (default).
    #[arg(long, overrides_with = "no_strict")]
    strict: bool,
    /// Run even if the schedule fails the conditions.
    #[arg(long = "no-strict", overrides_with = "strict")]
    no_strict: bool,
    /// Only print errors.
    #[arg(long, short)]
    quiet: bool,
}

/// The schedule conditions fail and strict mode is on.
#[derive(Debug)]
struct ConditionViolation(String);

impl std::fmt::Display for ConditionViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "schedule conditions violated: {}", self.0)
    }
}

impl std::error::Error for ConditionViolation {}

/// Error categories with their exit codes. Usage errors exit with 2 (clap).
fn category(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return ("ConfigError", 3);
        }
        if cause.is::<ConditionViolation>() {
            return ("ConditionViolation", 4);
        }
        if cause.is::<VerificationFailed>() {
            return ("VerificationFailed", 6);
        }
        if cause.is::<std::io::Error>() {
            return ("IoError", 7);
        }
        if let Some(e) = cause.downcast_ref::<DsmError>() {
            return match e {
                DsmError::Io(_) | DsmError::Csv(_) => ("IoError", 7),
                _ => ("RuntimeError", 5),
            };
        }
    }
    ("RuntimeError", 5)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(&args),
        Command::ListProblems { json } => list_problems(json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (name, code) = category(&err);
            let line = json!({ "error": name, "exit_code": code, "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}

fn print_conditions(report: &ConditionReport) {
    println!("schedule conditions:");
    for c in &report.items {
        let op = if c.strict { "<" } else { "<=" };
        println!(
            "  {:4} {:40} {:.6e} {op} {:.6e} (margin {:.3e})",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.value,
            c.bound,
            c.margin
        );
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out =
        args.output.clone().or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
            ConfigError("no output directory: pass --output, set output_dir or DSM_OUTPUT_DIR".into())
        })?;
    let strict = !args.no_strict;
    let resolved = config::resolve(&cfg)?;

    if !args.quiet {
        println!(
            "dsm {}: {:?} on '{}' (n = {})",
            dsm_core::VERSION,
            cfg.experiment,
            resolved.problem.name(),
            resolved.problem.dim()
        );
        println!(
            "schedule: eps(t) = {:.6e} ({:.6e} + t)^-{}, eps(0) = {:.6e}, M = {:.6e}, r = {:.6e}",
            resolved.schedule.c1(),
            resolved.schedule.c0(),
            resolved.schedule.b(),
            resolved.schedule.eps0(),
            resolved.derivation.m,
            resolved.derivation.r
        );
        print_conditions(&resolved.conditions);
    }
    if !resolved.conditions.passed && cfg.experiment.runs_flow() {
        let failed: Vec<&str> = resolved.conditions.items.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        if strict {
            return Err(ConditionViolation(failed.join("; ")).into());
        }
        eprintln!(
            "WARNING: schedule conditions fail ({}); the convergence theory does not apply to this run",
            failed.join("; ")
        );
    }

    std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    let outcome = experiments::run(&cfg, &resolved, &out);
    let (summary, files, error) = match outcome {
        Ok(o) => (o.summary, o.files, None),
        Err(e) => (json!(null), Vec::new(), Some(e)),
    };
    write_manifest(&out, &cfg, &resolved, strict, &summary, &files, error.as_ref())?;
    if let Some(e) = error {
        return Err(e);
    }
    if !args.quiet {
        println!("summary: {}", serde_json::to_string_pretty(&summary)?);
        println!("wrote {} and manifest.json to {}", files.join(", "), out.display());
    }
    Ok(())
}

fn write_manifest(
    out: &Path,
    cfg: &ExperimentConfig,
    resolved: &config::Resolved,
    strict: bool,
    summary: &serde_json::Value,
    files: &[String],
    error: Option<&anyhow::Error>,
) -> Result<()> {
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = json!({
        "schema_version": config::SCHEMA_VERSION,
        "library_version": dsm_core::VERSION,
        "timestamp_unix": timestamp,
        "strict": strict,
        "config": cfg,
        "resolved": resolved.summary(),
        "conditions": resolved.conditions,
        "summary": summary,
        "files": files,
        "error": error.map(|e| json!({ "category": category(e).0, "message": format!("{e:#}") })),
    });
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn list_problems(as_json: bool) -> Result<()> {
    let problems = json!([
        {
            "name": "diagonal",
            "description": "A = diag(singular_values), f = A y",
            "parameters": {
                "singular_values": "list of positive numbers",
                "solution": "list of numbers, same length"
            }
        },
        {
            "name": "integral",
            "description": "trapezoid discretization of a Gaussian convolution on [0, 1], f = A y",
            "parameters": {
                "n": "integer >= 8",
                "kernel_width": "number > 0 (default 0.1)",
                "solution": "optional list of n numbers (default: smooth profile in the range of A^T A)"
            }
        },
        {
            "name": "cubic",
            "description": "F(u) = L u + alpha u^3 - f, L the Neumann Laplacian",
            "parameters": {
                "n": "integer >= 2",
                "alpha": "number >= 0 (default 1)",
                "solution": "optional list of n numbers (f = B(solution))",
                "rhs": "optional list of n numbers (unknown solution)"
            }
        }
    ]);
    if as_json {
        println!("{}", serde_json::to_string(&problems)?);
        return Ok(());
    }
    for p in problems.as_array().expect("literal array") {
        println!("{}: {}", p["name"].as_str().unwrap_or_default(), p["description"].as_str().unwrap_or_default());
        if let Some(params) = p["parameters"].as_object() {
            for (k, v) in params {
                println!("    {k}: {}", v.as_str().unwrap_or_default());
            }
        }
    }
    Ok(())
}
