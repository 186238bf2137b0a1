//! Numerical core for an inverse source problem on a parallelepiped.
//!
//! The forward model is a fourth-order mixed-type equation of the second
//! kind: a time operator with a degenerate leading coefficient, a fourth-order
//! elliptic part in space, and semi-nonlocal two-point conditions coupling the
//! time endpoints through a factor `gamma`. The unknown right-hand side factor
//! `h(x, t)` multiplies a known shape `f(x, t, y)` and is recovered from an
//! interior trace observation `u(x, t, ell0) = phi0(x, t)`.
//!
//! The pipeline reduces the problem by a sine series in `y` to a coupled
//! ("loaded") family of two-dimensional mode problems, regularizes with a
//! small fifth-order time term, and iterates the loading to a fixed point:
//!
//! * [`expr`] — symbolic coefficient expressions in `x`, `t`, `y`,
//! * [`grid`] — the uniform `(x, t)` product grid,
//! * [`spectral`] — sine analysis/synthesis and Sobolev-type norms,
//! * [`problem`] — problem data and the solvability-condition report,
//! * [`operator`] — finite-difference assembly of one mode operator,
//! * [`band`] — banded LU with partial pivoting,
//! * [`solver`] — mode solves, Picard iteration, epsilon continuation,
//! * [`pipeline`] — trace forcing, source reconstruction, end-to-end drivers.

pub mod band;
pub mod expr;
pub mod grid;
pub mod operator;
pub mod pipeline;
pub mod problem;
pub mod solver;
pub mod spectral;

pub use expr::{Bindings, Expr, Var};
pub use grid::{Field, Grid};
pub use operator::{assemble, ModeOperator, RowKind};
pub use pipeline::{
    manufactured_case, observed_orders, run_mms_level, solve_forward, solve_inverse,
    InverseOptions, InverseSolution, ManufacturedCase, MmsLevel, MmsTemplate, PipelineError,
};
pub use problem::{check_conditions, compute_lambda, ConditionReport, ProblemSpec};
pub use solver::{
    epsilon_continuation, run_picard, ContinuationResult, ConvergenceLog, ModeSystem,
    PicardOptions, SolverError, DEFAULT_EPS_SCHEDULE,
};
pub use spectral::{expr_mode_fields, weighted_norm, ModeSet, ModeState, NormVariant};
