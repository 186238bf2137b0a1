//! Picard iteration for the coupled loaded mode equations.
//!
//! After sine reduction the unknown modes `u_k(x, t)` satisfy, for each `k`,
//!
//! ```text
//! A_k u_k = g_k + (f_k / f_0) * [ S + sqrt(2/ell) sum_m mu_m^4 u_m sin(mu_m ell0) ]
//! ```
//!
//! where `A_k` is the assembled per-mode operator, `S` is the source field
//! recovered from the trace data, and the bracket couples all modes through
//! the loading term. The fixed point is computed by Picard iteration from
//! the zero state (or a warm start): each sweep freezes the bracket at the
//! previous iterate and solves the `K` now-independent band systems, in
//! parallel, collecting in mode order so results are bitwise independent of
//! the thread count.
//!
//! The fifth-order regularization weight `eps` is driven through a
//! decreasing schedule; each stage warm-starts from the previous stage's
//! fixed point and the stage-to-stage differences are recorded as a
//! stability diagnostic.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::band::{BandError, BandLu};
use crate::grid::{Field, Grid};
use crate::operator::{assemble, ModeOperator, OperatorError};
use crate::problem::ProblemSpec;
use crate::spectral::{weighted_norm, ModeSet, ModeState, NormVariant, SpectralError};

/// Normwise backward error `|r| / (|A| |x| + |b|)` each linear solve must
/// reach after refinement. A healthy factorization lands near machine
/// epsilon; values above this gate mean the solve cannot be trusted.
pub const RESIDUAL_GATE: f64 = 1e-10;

/// Regularization schedule used when the caller does not override it.
pub const DEFAULT_EPS_SCHEDULE: [f64; 3] = [1e-2, 1e-3, 1e-4];

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("mode {mode}: {source}")]
    Mode {
        mode: usize,
        #[source]
        source: OperatorError,
    },
    #[error(
        "mode {mode}: linear solve stalled at backward error {rel:.3e} (gate {gate:.3e})"
    )]
    ResidualGate { mode: usize, rel: f64, gate: f64 },
    #[error("mode state carries {state} fields but the basis has {modes} modes")]
    ModeCountMismatch { state: usize, modes: usize },
    #[error("continuation schedule is empty")]
    EmptySchedule,
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Band(#[from] BandError),
}

/// Everything the iteration needs besides the spec itself: the reduced data
/// fields, cached once per grid and mode count.
#[derive(Debug, Clone)]
pub struct ModeSystem {
    pub grid: Grid,
    pub modes: ModeSet,
    /// Sine coefficients `f_k(x, t)` of the load shape.
    pub f_modes: ModeState,
    /// Sine coefficients `g_k(x, t)` of the known source part.
    pub g_modes: ModeState,
    /// Trace of the load shape on the observation plane, `f(x, t, ell0)`.
    pub f0: Field,
    /// Source field recovered from the observed trace (`S` above).
    pub source: Field,
}

#[derive(Debug, Clone)]
pub struct PicardOptions {
    /// Relative stopping tolerance on the iterate difference.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

/// One Picard sweep's diagnostics. `diff_norm_2` and `diff_norm_4` are the
/// weighted mode norms (Sobolev orders 2 and 4, weight `(1+mu^4)^3`) of the
/// difference from the previous iterate; `ratio` divides consecutive
/// `diff_norm_2` values; `residual` is the relative algebraic residual of
/// the full coupled system at the new iterate.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iteration: usize,
    pub diff_norm_2: f64,
    pub diff_norm_4: f64,
    pub ratio: f64,
    pub residual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceLog {
    pub eps: f64,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl ConvergenceLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,diff_norm_2,diff_norm_4,ratio,residual,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.iteration, r.diff_norm_2, r.diff_norm_4, r.ratio, r.residual, r.seconds
            ));
        }
        out
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub state: ModeState,
    /// One log per schedule stage, in execution order.
    pub logs: Vec<ConvergenceLog>,
    /// Weighted norm (order 2) of the difference between consecutive stage
    /// fixed points; length is one less than the schedule.
    pub stage_diffs: Vec<f64>,
    pub schedule: Vec<f64>,
}

impl ContinuationResult {
    pub fn all_converged(&self) -> bool {
        self.logs.iter().all(|l| l.converged)
    }

    pub fn final_log(&self) -> &ConvergenceLog {
        self.logs.last().expect("schedule is nonempty")
    }
}

/// Loading term `sqrt(2/ell) sum_m mu_m^4 u_m(x, t) sin(mu_m ell0)`.
pub fn loading_term(state: &ModeState, modes: &ModeSet, grid: &Grid, ell0: f64) -> Field {
    let mut acc = grid.zeros();
    for (k, u) in state.modes.iter().enumerate() {
        let w = modes.mu[k].powi(4) * modes.basis(k, ell0);
        acc.zip_mut_with(u, |a, &b| *a += w * b);
    }
    acc
}

/// Solve one band system with iterative refinement against the assembled
/// sparse matrix. A zero right-hand side short-circuits to the exact zero
/// solution. Fails if refinement cannot reach [`RESIDUAL_GATE`].
pub fn solve_mode(
    op: &ModeOperator,
    lu: &BandLu,
    rhs: &[f64],
    mode: usize,
) -> Result<Vec<f64>, SolverError> {
    let bnorm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bnorm == 0.0 {
        return Ok(vec![0.0; rhs.len()]);
    }
    let mut row_sums = vec![0.0f64; rhs.len()];
    for &(r, _, w) in op.coo().triplets() {
        row_sums[r] += w.abs();
    }
    let anorm = row_sums.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut x = lu.solve(rhs)?;
    let mut best = x.clone();
    let mut best_rel = f64::INFINITY;
    for _ in 0..8 {
        let ax = op.coo().matvec(&x)?;
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let xnorm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rel = rnorm / (anorm * xnorm + bnorm);
        if rel < best_rel {
            best_rel = rel;
            best.copy_from_slice(&x);
        } else {
            break; // refinement no longer helps
        }
        if rel <= RESIDUAL_GATE {
            break;
        }
        let dx = lu.solve(&r)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    if best_rel <= RESIDUAL_GATE {
        Ok(best)
    } else {
        Err(SolverError::ResidualGate {
            mode,
            rel: best_rel,
            gate: RESIDUAL_GATE,
        })
    }
}

/// Per-mode right-hand-side fields at a given state of the coupling.
fn rhs_fields(
    spec: &ProblemSpec,
    sys: &ModeSystem,
    ratios: &[Field],
    state: &ModeState,
) -> Vec<Field> {
    let loading = loading_term(state, &sys.modes, &sys.grid, spec.ell0);
    let common = &sys.source + &loading;
    (0..sys.modes.count())
        .map(|k| &sys.g_modes.modes[k] + &(&ratios[k] * &common))
        .collect()
}

/// Relative algebraic residual of the coupled system at `state`: the band
/// matrices applied to the iterate against the right-hand sides rebuilt
/// from the same iterate, in the plain vector 2-norm over all modes.
fn system_residual(
    spec: &ProblemSpec,
    sys: &ModeSystem,
    ratios: &[Field],
    ops: &[ModeOperator],
    state: &ModeState,
) -> Result<f64, SolverError> {
    let fields = rhs_fields(spec, sys, ratios, state);
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, op) in ops.iter().enumerate() {
        let b = op.rhs_vector(&fields[k])?;
        let v = op.flatten(&state.modes[k])?;
        let av = op.coo().matvec(&v)?;
        for (a, bb) in av.iter().zip(&b) {
            num += (a - bb) * (a - bb);
            den += bb * bb;
        }
    }
    Ok((num / den.max(1e-300)).sqrt())
}

/// Run the Picard iteration at a fixed regularization weight, starting from
/// `start` (pass the zero state for a cold start). Non-convergence within
/// `max_iter` sweeps is reported through the log's `converged` flag, not as
/// an error.
pub fn run_picard(
    spec: &ProblemSpec,
    sys: &ModeSystem,
    eps: f64,
    start: &ModeState,
    opts: &PicardOptions,
) -> Result<(ModeState, ConvergenceLog), SolverError> {
    let kcount = sys.modes.count();
    if start.count() != kcount || sys.f_modes.count() != kcount || sys.g_modes.count() != kcount {
        return Err(SolverError::ModeCountMismatch {
            state: start.count(),
            modes: kcount,
        });
    }

    let assembled: Vec<Result<(ModeOperator, BandLu), SolverError>> = (0..kcount)
        .into_par_iter()
        .map(|k| {
            let op = assemble(spec, &sys.grid, sys.modes.mu[k], eps)
                .map_err(|source| SolverError::Mode { mode: k, source })?;
            let lu = op
                .factor()
                .map_err(|source| SolverError::Mode { mode: k, source })?;
            Ok((op, lu))
        })
        .collect();
    let mut ops = Vec::with_capacity(kcount);
    let mut lus = Vec::with_capacity(kcount);
    for r in assembled {
        let (op, lu) = r?;
        ops.push(op);
        lus.push(lu);
    }

    let ratios: Vec<Field> = (0..kcount)
        .map(|k| &sys.f_modes.modes[k] / &sys.f0)
        .collect();

    let mut prev = start.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut converged = false;

    for iter in 1..=opts.max_iter {
        let clock = Instant::now();
        let fields = rhs_fields(spec, sys, &ratios, &prev);
        let solved: Vec<Result<Field, SolverError>> = (0..kcount)
            .into_par_iter()
            .map(|k| {
                let b = ops[k].rhs_vector(&fields[k])?;
                let x = solve_mode(&ops[k], &lus[k], &b, k)?;
                Ok(ops[k].unflatten(&x))
            })
            .collect();
        let mut new_modes = Vec::with_capacity(kcount);
        for r in solved {
            new_modes.push(r?);
        }
        let state = ModeState { modes: new_modes };

        let diff = state.sub(&prev);
        let diff2 = weighted_norm(&diff, &sys.modes, &sys.grid, 2, 3.0, NormVariant::VectorC)?;
        let diff4 = weighted_norm(&diff, &sys.modes, &sys.grid, 4, 3.0, NormVariant::VectorC)?;
        let norm2 = weighted_norm(&state, &sys.modes, &sys.grid, 2, 3.0, NormVariant::VectorC)?;
        let ratio = records
            .last()
            .map(|r| diff2 / r.diff_norm_2)
            .unwrap_or(f64::NAN);
        let residual = system_residual(spec, sys, &ratios, &ops, &state)?;
        records.push(IterationRecord {
            iteration: iter,
            diff_norm_2: diff2,
            diff_norm_4: diff4,
            ratio,
            residual,
            seconds: clock.elapsed().as_secs_f64(),
        });

        prev = state;
        if diff2 / norm2.max(1e-300) < opts.tol {
            converged = true;
            break;
        }
    }

    Ok((
        prev,
        ConvergenceLog {
            eps,
            records,
            converged,
        },
    ))
}

/// Drive the regularization weight through `schedule`, warm-starting every
/// stage from the previous fixed point.
pub fn epsilon_continuation(
    spec: &ProblemSpec,
    sys: &ModeSystem,
    schedule: &[f64],
    opts: &PicardOptions,
) -> Result<ContinuationResult, SolverError> {
    if schedule.is_empty() {
        return Err(SolverError::EmptySchedule);
    }
    let mut state = ModeState::zeros(&sys.grid, sys.modes.count());
    let mut logs = Vec::with_capacity(schedule.len());
    let mut stage_diffs = Vec::new();
    let mut previous_stage: Option<ModeState> = None;

    for &eps in schedule {
        let (next, log) = run_picard(spec, sys, eps, &state, opts)?;
        if let Some(prev) = &previous_stage {
            let d = next.sub(prev);
            stage_diffs.push(weighted_norm(
                &d,
                &sys.modes,
                &sys.grid,
                2,
                3.0,
                NormVariant::VectorC,
            )?);
        }
        previous_stage = Some(next.clone());
        state = next;
        logs.push(log);
    }

    Ok(ContinuationResult {
        state,
        logs,
        stage_diffs,
        schedule: schedule.to_vec(),
    })
}
