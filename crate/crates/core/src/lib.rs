//! Continuous regularized Newton flow (dynamical systems method) for
//! ill-posed equations `F(u) = 0` with monotone `F`.
//!
//! The pieces are a dense linear algebra kernel ([`linalg`]), the operator
//! problems ([`operator`]), the regularizer schedule `eps(t)` and its
//! conditions ([`schedule`]), the flow itself ([`flow`]), the regularized path
//! `V(t)` ([`path`]), scalar Riccati envelopes ([`riccati`]) and the
//! noisy-data stopping rule ([`stopping`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod export;
pub mod flow;
pub mod integrator;
pub mod linalg;
pub mod operator;
pub mod path;
pub mod quadrature;
pub mod riccati;
pub mod schedule;
pub mod stopping;

pub use error::{DsmError, Result};
pub use flow::{integrate, integrate_noisy, rhs, rhs_linear, Diagnostics, FlowConfig, Trajectory};
pub use linalg::{DenseMatrix, Vector};
pub use operator::{
    check_monotone, make_cubic_monotone_problem, make_diagonal_problem, make_integral_problem, Bounds, LinearProblem,
    MonotoneMap, OperatorProblem,
};
pub use path::{check_path_bounds, path, solve_v, NewtonOptions, PathPoint};
pub use riccati::{check_conditions, envelope, integrate_majorant, nu, riccati_closed_form, RiccatiSpec};
pub use schedule::{derive_for_problem, derive_schedule, validate_conditions, ConditionReport, EpsilonSchedule};
pub use stopping::{delta_sweep, noisy_envelope_check, StoppingRule, SweepReport};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
