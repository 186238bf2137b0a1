//! End-to-end drivers: from a problem description to the recovered source
//! pair `(u, h)`, plus manufactured cases for order-of-accuracy studies.
//!
//! The inverse driver follows the reduction chain:
//!
//! 1. sine-analyze the data `f` and `g` into mode coefficient fields,
//! 2. form the trace source `S = P(phi0) - M(phi0) - g(., ., ell0)`
//!    symbolically and sample it,
//! 3. run the regularized Picard continuation for the coupled modes,
//! 4. reconstruct `h = (S + loading) / f0` pointwise and report the trace
//!    mismatch of the synthesized solution against the observed `phi0`.

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{EvalError, Expr, Var};
use crate::grid::{Field, Grid, GridError};
use crate::operator::assemble;
use crate::problem::{check_conditions, find_f0_violation, ConditionReport, ProblemError, ProblemSpec};
use crate::solver::{
    epsilon_continuation, loading_term, solve_mode, ContinuationResult, ModeSystem, PicardOptions,
    SolverError, DEFAULT_EPS_SCHEDULE,
};
use crate::spectral::{expr_mode_fields, ModeSet, ModeState, SpectralError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("evaluating {what}: {source}")]
    Eval {
        what: &'static str,
        #[source]
        source: EvalError,
    },
    #[error("load shape magnitude {value:.6e} at (x, t) = ({x}, {t}) is below eta = {eta}")]
    LoadShapeTooSmall { x: f64, t: f64, value: f64, eta: f64 },
    #[error("manufactured case: {0}")]
    BadTemplate(String),
}

/// Options shared by the inverse and forward drivers.
#[derive(Debug, Clone)]
pub struct InverseOptions {
    pub eps_schedule: Vec<f64>,
    pub picard: PicardOptions,
    /// Number of y-samples used to sine-analyze the data; defaults to
    /// `max(4K + 1, 257)`.
    pub ny: Option<usize>,
    /// Embedding constants folded into the contraction estimate.
    pub c2: f64,
    pub c3: f64,
}

impl Default for InverseOptions {
    fn default() -> Self {
        InverseOptions {
            eps_schedule: DEFAULT_EPS_SCHEDULE.to_vec(),
            picard: PicardOptions::default(),
            ny: None,
            c2: 1.0,
            c3: 1.0,
        }
    }
}

fn default_ny(k_count: usize) -> usize {
    (4 * k_count + 1).max(257)
}

/// Symbolic source term recovered from the observed trace:
/// `sum_i K_i Dt^i phi0 - (a Dx^4 + b Dx^2 Dt^2 - c Dx^2) phi0 - g(., ., ell0)`.
pub fn trace_source_expr(spec: &ProblemSpec) -> Expr {
    let phi = &spec.phi0;
    let mut acc = Expr::Num(0.0);
    for (i, k) in spec.k_coeffs.iter().enumerate() {
        acc = Expr::add(acc, Expr::mul(k.clone(), phi.differentiate(Var::T, i as u32)));
    }
    let phi_xx = phi.differentiate(Var::X, 2);
    let phi_xxxx = phi.differentiate(Var::X, 4);
    let phi_xxtt = phi_xx.differentiate(Var::T, 2);
    acc = Expr::sub(acc, Expr::mul(Expr::Num(spec.a), phi_xxxx));
    acc = Expr::sub(acc, Expr::mul(Expr::Num(spec.b), phi_xxtt));
    acc = Expr::add(acc, Expr::mul(Expr::Num(spec.c), phi_xx));
    Expr::sub(acc, spec.g0())
}

/// Assemble the cached mode system for a spec on a grid.
pub fn build_mode_system(
    spec: &ProblemSpec,
    grid: &Grid,
    k_count: usize,
    ny: Option<usize>,
) -> Result<ModeSystem, PipelineError> {
    let modes = ModeSet::new(spec.ell, k_count)?;
    let ny = ny.unwrap_or_else(|| default_ny(k_count));
    let f_modes = expr_mode_fields(&spec.f, grid, &modes, ny)?;
    let g_modes = expr_mode_fields(&spec.g, grid, &modes, ny)?;
    let f0 = grid
        .sample_expr(&spec.f0())
        .map_err(|source| PipelineError::Eval { what: "f0", source })?;
    let source = grid
        .sample_expr(&trace_source_expr(spec))
        .map_err(|source| PipelineError::Eval {
            what: "trace source",
            source,
        })?;
    Ok(ModeSystem {
        grid: grid.clone(),
        modes,
        f_modes,
        g_modes,
        f0,
        source,
    })
}

/// Pointwise reconstruction `h = (S + loading(u)) / f0`. Refuses to divide
/// where the load-shape trace has dipped below the admissibility threshold.
pub fn reconstruct_h(
    sys: &ModeSystem,
    state: &ModeState,
    ell0: f64,
    eta: f64,
) -> Result<Field, PipelineError> {
    for i in 0..sys.grid.nx_total() {
        for j in 0..sys.grid.nt {
            let v = sys.f0[(i, j)];
            if v.abs() < eta {
                return Err(PipelineError::LoadShapeTooSmall {
                    x: sys.grid.x(i),
                    t: sys.grid.t(j),
                    value: v,
                    eta,
                });
            }
        }
    }
    let loading = loading_term(state, &sys.modes, &sys.grid, ell0);
    let numer = &sys.source + &loading;
    Ok(&numer / &sys.f0)
}

/// `L2(Q)` mismatch between the synthesized trace
/// `sum_k u_k(x, t) Y_k(ell0)` and the observed `phi0`.
pub fn trace_residual(
    spec: &ProblemSpec,
    sys: &ModeSystem,
    state: &ModeState,
) -> Result<f64, PipelineError> {
    let mut synth = sys.grid.zeros();
    for (k, u) in state.modes.iter().enumerate() {
        let w = sys.modes.basis(k, spec.ell0);
        synth.zip_mut_with(u, |a, &b| *a += w * b);
    }
    let observed = sys
        .grid
        .sample_expr(&spec.phi0)
        .map_err(|source| PipelineError::Eval {
            what: "phi0",
            source,
        })?;
    let diff = &synth - &observed;
    Ok(sys.grid.l2_norm(&diff))
}

#[derive(Debug, Clone)]
pub struct InverseSolution {
    /// Recovered time-space factor of the unknown source.
    pub h: Field,
    /// Recovered mode coefficient fields of `u`.
    pub state: ModeState,
    pub continuation: ContinuationResult,
    /// `L2(Q)` mismatch of the synthesized trace against the data.
    pub trace_residual: f64,
    /// Solvability-theory report evaluated on this grid.
    pub report: ConditionReport,
}

/// Full inverse driver. Hard gates: the structural checks in
/// [`ProblemSpec::validate`] and the load-shape threshold `|f0| >= eta`;
/// everything else in the condition report is advisory and left to the
/// caller to surface.
pub fn solve_inverse(
    spec: &ProblemSpec,
    grid: &Grid,
    k_count: usize,
    opts: &InverseOptions,
) -> Result<InverseSolution, PipelineError> {
    spec.validate()?;
    if let Some((x, t, value)) = find_f0_violation(spec, grid)? {
        return Err(PipelineError::LoadShapeTooSmall {
            x,
            t,
            value,
            eta: spec.eta,
        });
    }
    let report = check_conditions(spec, grid, k_count, opts.c2, opts.c3)?;
    let sys = build_mode_system(spec, grid, k_count, opts.ny)?;
    let continuation = epsilon_continuation(spec, &sys, &opts.eps_schedule, &opts.picard)?;
    let h = reconstruct_h(&sys, &continuation.state, spec.ell0, spec.eta)?;
    let residual = trace_residual(spec, &sys, &continuation.state)?;
    Ok(InverseSolution {
        h,
        state: continuation.state.clone(),
        continuation,
        trace_residual: residual,
        report,
    })
}

/// Forward driver: with `h` known the modes decouple, so each one is a
/// single band solve of `A_k u_k = psi_k` where `psi = g + h f`. Uses the
/// last (smallest) weight of the schedule.
pub fn solve_forward(
    spec: &ProblemSpec,
    grid: &Grid,
    k_count: usize,
    h: &Expr,
    opts: &InverseOptions,
) -> Result<ModeState, PipelineError> {
    spec.validate()?;
    let modes = ModeSet::new(spec.ell, k_count)?;
    let ny = opts.ny.unwrap_or_else(|| default_ny(k_count));
    let psi = Expr::add(spec.g.clone(), Expr::mul(h.clone(), spec.f.clone()));
    let psi_modes = expr_mode_fields(&psi, grid, &modes, ny)?;
    let eps = *opts
        .eps_schedule
        .last()
        .ok_or(SolverError::EmptySchedule)?;
    let solved: Vec<Result<Field, SolverError>> = (0..k_count)
        .into_par_iter()
        .map(|k| {
            let op = assemble(spec, grid, modes.mu[k], eps)
                .map_err(|source| SolverError::Mode { mode: k, source })?;
            let lu = op
                .factor()
                .map_err(|source| SolverError::Mode { mode: k, source })?;
            let b = op.rhs_vector(&psi_modes.modes[k])?;
            let x = solve_mode(&op, &lu, &b, k)?;
            Ok(op.unflatten(&x))
        })
        .collect();
    let mut fields = Vec::with_capacity(k_count);
    for r in solved {
        fields.push(r.map_err(PipelineError::Solver)?);
    }
    Ok(ModeState { modes: fields })
}

/// Recipe for a manufactured problem whose exact solution is known in
/// closed form: `u* = e^{nu t} sin(pi x) sum_q alpha_q Y_{m_q}(y)` with
/// `nu = ln(gamma) / T`, together with a prescribed `h*`.
#[derive(Debug, Clone)]
pub struct MmsTemplate {
    pub k_coeffs: [Expr; 5],
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub gamma: f64,
    pub t_end: f64,
    pub ell: f64,
    pub ell0: f64,
    /// Load shape `f(x, t, y)`.
    pub f: Expr,
    pub eta: f64,
    /// Prescribed exact factor `h*(x, t)`.
    pub h_true: Expr,
    /// One-based mode numbers active in `u*`, strictly increasing.
    pub modes: Vec<usize>,
    pub amplitudes: Vec<f64>,
    /// Number of modes the solver carries (at least `max(modes)`).
    pub k_count: usize,
}

/// A template expanded into a solvable spec plus its exact fields.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub spec: ProblemSpec,
    pub k_count: usize,
    pub u_star: Expr,
    pub h_true: Expr,
    pub nu: f64,
    active: Vec<(usize, f64)>,
}

/// Build the spec whose exact solution is the template's `(u*, h*)`:
/// differentiate `u*` symbolically through the full operator, then define
/// `g = L u* - h* f` and read the trace data off `u*` at `y = ell0`.
pub fn manufactured_case(tpl: &MmsTemplate) -> Result<ManufacturedCase, PipelineError> {
    if tpl.modes.is_empty() || tpl.modes.len() != tpl.amplitudes.len() {
        return Err(PipelineError::BadTemplate(format!(
            "{} mode numbers against {} amplitudes",
            tpl.modes.len(),
            tpl.amplitudes.len()
        )));
    }
    if !tpl.modes.windows(2).all(|w| w[0] < w[1]) || tpl.modes[0] == 0 {
        return Err(PipelineError::BadTemplate(
            "mode numbers must be strictly increasing and one-based".into(),
        ));
    }
    if *tpl.modes.last().unwrap() > tpl.k_count {
        return Err(PipelineError::BadTemplate(format!(
            "template uses mode {} but the solver carries only {}",
            tpl.modes.last().unwrap(),
            tpl.k_count
        )));
    }
    if tpl.gamma <= 1.0 {
        return Err(PipelineError::BadTemplate(format!(
            "need gamma > 1 for the exponential profile, got {}",
            tpl.gamma
        )));
    }

    let nu = tpl.gamma.ln() / tpl.t_end;
    let norm = (2.0 / tpl.ell).sqrt();
    let mut series = Expr::Num(0.0);
    for (&m, &alpha) in tpl.modes.iter().zip(&tpl.amplitudes) {
        let mu = std::f64::consts::PI * m as f64 / tpl.ell;
        let sine = Expr::Sin(Box::new(Expr::mul(Expr::Num(mu), Expr::Var(Var::Y))));
        series = Expr::add(series, Expr::mul(Expr::Num(alpha * norm), sine));
    }
    let envelope = Expr::mul(
        Expr::Exp(Box::new(Expr::mul(Expr::Num(nu), Expr::Var(Var::T)))),
        Expr::Sin(Box::new(Expr::mul(
            Expr::Num(std::f64::consts::PI),
            Expr::Var(Var::X),
        ))),
    );
    let u_star = Expr::mul(envelope, series);

    // L u* = sum_i K_i Dt^i u* - (a Dx^4 + b Dx^2 Dt^2 - c Dx^2) u* + Dy^4 u*.
    let mut lu = Expr::Num(0.0);
    for (i, k) in tpl.k_coeffs.iter().enumerate() {
        lu = Expr::add(
            lu,
            Expr::mul(k.clone(), u_star.differentiate(Var::T, i as u32)),
        );
    }
    let u_xx = u_star.differentiate(Var::X, 2);
    lu = Expr::sub(
        lu,
        Expr::mul(Expr::Num(tpl.a), u_star.differentiate(Var::X, 4)),
    );
    lu = Expr::sub(
        lu,
        Expr::mul(Expr::Num(tpl.b), u_xx.differentiate(Var::T, 2)),
    );
    lu = Expr::add(lu, Expr::mul(Expr::Num(tpl.c), u_xx));
    lu = Expr::add(lu, u_star.differentiate(Var::Y, 4));

    let g = Expr::sub(lu, Expr::mul(tpl.h_true.clone(), tpl.f.clone()));
    let phi0 = u_star.bind(Var::Y, tpl.ell0);

    let spec = ProblemSpec {
        k_coeffs: tpl.k_coeffs.clone(),
        a: tpl.a,
        b: tpl.b,
        c: tpl.c,
        gamma: tpl.gamma,
        t_end: tpl.t_end,
        ell: tpl.ell,
        ell0: tpl.ell0,
        f: tpl.f.clone(),
        g,
        phi0,
        eta: tpl.eta,
    };
    spec.validate()?;

    Ok(ManufacturedCase {
        spec,
        k_count: tpl.k_count,
        u_star,
        h_true: tpl.h_true.clone(),
        nu,
        active: tpl.modes.iter().copied().zip(tpl.amplitudes.iter().copied()).collect(),
    })
}

impl ManufacturedCase {
    /// Exact mode coefficient fields on a grid: `alpha_k e^{nu t} sin(pi x)`
    /// for active modes, zero otherwise.
    pub fn exact_state(&self, grid: &Grid) -> ModeState {
        let nu = self.nu;
        let mut fields = Vec::with_capacity(self.k_count);
        for k in 1..=self.k_count {
            match self.active.iter().find(|(m, _)| *m == k) {
                Some(&(_, alpha)) => fields.push(grid.sample(|x, t| {
                    alpha * (nu * t).exp() * (std::f64::consts::PI * x).sin()
                })),
                None => fields.push(grid.zeros()),
            }
        }
        ModeState { modes: fields }
    }

    pub fn h_field(&self, grid: &Grid) -> Result<Field, PipelineError> {
        grid.sample_expr(&self.h_true)
            .map_err(|source| PipelineError::Eval {
                what: "exact h",
                source,
            })
    }
}

/// Errors of one manufactured-solution run at a fixed resolution.
#[derive(Debug, Clone, Copy)]
pub struct MmsLevel {
    pub nx: usize,
    pub nt: usize,
    pub hx: f64,
    pub ht: f64,
    /// Relative `L2(Q)` error of the recovered `h`.
    pub err_h: f64,
    /// Relative `L2` error of the mode stack against the exact modes.
    pub err_u: f64,
    pub trace_residual: f64,
}

/// Solve the manufactured inverse problem at one resolution and measure the
/// errors against the exact fields.
pub fn run_mms_level(
    case: &ManufacturedCase,
    nx: usize,
    nt: usize,
    opts: &InverseOptions,
) -> Result<MmsLevel, PipelineError> {
    let grid = Grid::new(nx, nt, case.spec.t_end)?;
    let sol = solve_inverse(&case.spec, &grid, case.k_count, opts)?;

    let h_star = case.h_field(&grid)?;
    let dh = &sol.h - &h_star;
    let err_h = grid.l2_norm(&dh) / grid.l2_norm(&h_star);

    let exact = case.exact_state(&grid);
    let mut num = 0.0;
    let mut den = 0.0;
    for (u, w) in sol.state.modes.iter().zip(&exact.modes) {
        let d = u - w;
        num += grid.l2_norm(&d).powi(2);
        den += grid.l2_norm(w).powi(2);
    }
    let err_u = (num / den.max(1e-300)).sqrt();

    Ok(MmsLevel {
        nx,
        nt,
        hx: grid.hx,
        ht: grid.ht,
        err_h,
        err_u,
        trace_residual: sol.trace_residual,
    })
}

/// Observed convergence orders from consecutive error pairs,
/// `ln(e_prev / e_next) / ln(h_prev / h_next)`; the first entry has no
/// predecessor and is NaN.
pub fn observed_orders(errors: &[f64], steps: &[f64]) -> Vec<f64> {
    assert_eq!(errors.len(), steps.len());
    (0..errors.len())
        .map(|i| {
            if i == 0 {
                f64::NAN
            } else {
                (errors[i - 1] / errors[i]).ln() / (steps[i - 1] / steps[i]).ln()
            }
        })
        .collect()
}
