//! Per-mode space-time operator assembly.
//!
//! For mode frequency `mu` and regularization `eps >= 0` the operator
//! discretizes
//!
//! ```text
//! -eps * Dt(Dt^4 + 2 Dt^2 Dx^2 + Dx^4) u + sum_i K_i(x,t) Dt^i u
//!     - (a Dx^4 + b Dx^2 Dt^2 - c Dx^2) u + mu^4 u
//! ```
//!
//! on the uniform `(x, t)` grid with second-order central stencils. The
//! unknowns are the interior x-columns at every time level, ordered
//! time-major (`index = (i-1)*nt + j`), which keeps the band narrow.
//!
//! Boundary closure:
//! - x-legs reaching `x = 0` or `x = 1` are dropped (`u = 0`); legs one step
//!   beyond are folded back with flipped sign (`u_{-1} = -u_1`), the odd
//!   reflection consistent with `u = u_xx = 0`.
//! - t-legs leaving `[0, T]` wrap through the endpoint identification
//!   `gamma * u(0) = u(T)`: a sample below `t = 0` reads `gamma^{-1}` times
//!   the sample one period up, one above `t = T` reads `gamma` times the
//!   sample one period down. On profiles `e^{nu t}` with `e^{nu T} = gamma`
//!   the wrap is exact.
//!
//! The time direction carries `5` endpoint constraint rows for `eps > 0`
//! (derivative orders `p = 0..4`) and `3` for `eps = 0` (`p = 0..2`); the
//! remaining levels carry equation rows. Constraint rows use one-sided
//! stencils fitted to reproduce derivatives of polynomials up to degree
//! `p+1` *and* of `e^{nu t}` exactly, so the discrete condition
//! `gamma * Dt^p u(0) = Dt^p u(T)` annihilates the compatible exponential
//! profile to rounding, not merely to truncation order.

use thiserror::Error;

use crate::band::{BandError, BandLu, BandMatrix, CooMatrix};
use crate::expr::EvalError;
use crate::grid::{Field, Grid};
use crate::problem::ProblemSpec;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("evaluating coefficient {name}: {source}")]
    Coefficient {
        name: &'static str,
        #[source]
        source: EvalError,
    },
    #[error("field shape {got:?} does not match grid ({want_rows}, {want_cols})")]
    ShapeMismatch {
        got: (usize, usize),
        want_rows: usize,
        want_cols: usize,
    },
    #[error(transparent)]
    Band(#[from] BandError),
}

/// Role of one matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Interior discretization of the differential operator.
    Equation,
    /// Endpoint constraint `gamma * Dt^p u(0) = Dt^p u(T)`.
    Nonlocal(usize),
}

/// One-dimensional stencil: sample offsets and matching weights.
type Stencil = Vec<(i64, f64)>;

fn t_stencils(ht: f64) -> [Stencil; 6] {
    let h = ht;
    let d0 = vec![(0, 1.0)];
    let d1 = vec![(-1, -0.5 / h), (1, 0.5 / h)];
    let h2 = h * h;
    let d2 = vec![(-1, 1.0 / h2), (0, -2.0 / h2), (1, 1.0 / h2)];
    // Dt^3 and Dt^5 as central first differences of Dt^2 and Dt^4; on a
    // uniform grid these coincide with the classic central stencils.
    let d3 = central_difference_of(&d2, h);
    let h4 = h2 * h2;
    let d4 = vec![
        (-2, 1.0 / h4),
        (-1, -4.0 / h4),
        (0, 6.0 / h4),
        (1, -4.0 / h4),
        (2, 1.0 / h4),
    ];
    let d5 = central_difference_of(&d4, h);
    [d0, d1, d2, d3, d4, d5]
}

/// First central difference of a stencil: `(S(j+1) - S(j-1)) / (2h)`.
fn central_difference_of(s: &Stencil, h: f64) -> Stencil {
    let mut map = std::collections::BTreeMap::new();
    for &(off, w) in s {
        *map.entry(off + 1).or_insert(0.0) += w / (2.0 * h);
        *map.entry(off - 1).or_insert(0.0) -= w / (2.0 * h);
    }
    map.into_iter().filter(|&(_, w)| w != 0.0).collect()
}

fn x_stencil_2(hx: f64) -> Stencil {
    let h2 = hx * hx;
    vec![(-1, 1.0 / h2), (0, -2.0 / h2), (1, 1.0 / h2)]
}

fn x_stencil_4(hx: f64) -> Stencil {
    let h4 = hx.powi(4);
    vec![
        (-2, 1.0 / h4),
        (-1, -4.0 / h4),
        (0, 6.0 / h4),
        (1, -4.0 / h4),
        (2, 1.0 / h4),
    ]
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Dense Gaussian elimination with partial pivoting for the tiny fitted
/// stencil systems (n <= 7).
fn dense_solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for j in 0..n {
        let p = (j..n)
            .max_by(|&r, &s| a[r][j].abs().total_cmp(&a[s][j].abs()))
            .unwrap();
        a.swap(j, p);
        b.swap(j, p);
        for r in (j + 1)..n {
            let f = a[r][j] / a[j][j];
            for c in j..n {
                a[r][c] -= f * a[j][c];
            }
            b[r] -= f * b[j];
        }
    }
    for j in (0..n).rev() {
        let mut s = b[j];
        for c in (j + 1)..n {
            s -= a[j][c] * b[c];
        }
        b[j] = s / a[j][j];
    }
    b
}

/// Scaled exponential remainder `psi(s) = (e^{beta s} - T_{deg<start}(beta s))
/// / beta^start`, the part of the exponential outside the polynomial span of
/// the fitted stencil. Series evaluation for moderate `|beta s|` avoids the
/// catastrophic cancellation of the direct form (which loses digits while
/// the remainder is small against `e^{beta s}`); as `beta -> 0` the series
/// tends to the plain monomial `s^start / start!`, so the fitting system
/// stays well conditioned for any `|gamma| > 1`.
fn exp_remainder(beta: f64, s: f64, start: usize) -> f64 {
    let z = beta * s;
    if z.abs() <= 2.0 {
        let mut term = s.powi(start as i32) / factorial(start);
        let mut acc = term;
        for r in (start + 1)..(start + 64) {
            term *= z / r as f64;
            acc += term;
            if term.abs() <= acc.abs() * 1e-18 + 1e-300 {
                break;
            }
        }
        acc
    } else {
        let mut poly = 0.0;
        let mut zp = 1.0;
        for r in 0..start {
            poly += zp / factorial(r);
            zp *= z;
        }
        (z.exp() - poly) / beta.powi(start as i32)
    }
}

/// Weights of a one-sided `p`-th derivative at the first (or last) of
/// `p + 3` unit-spaced nodes, exact on polynomials up to degree `p+1` and on
/// `e^{beta s}`. Returned in unit-step coordinates: the caller divides by
/// `ht^p` (or, for the constraint rows, does not scale at all, since only
/// the homogeneous combination matters).
fn fitted_endpoint_weights(p: usize, beta: f64, at_right_end: bool) -> Vec<f64> {
    let n = p + 3;
    let nodes: Vec<f64> = if at_right_end {
        (0..n).map(|s| s as f64 - (n as f64 - 1.0)).collect()
    } else {
        (0..n).map(|s| s as f64).collect()
    };
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for q in 0..=(p + 1) {
        for (s, &node) in nodes.iter().enumerate() {
            a[q][s] = node.powi(q as i32);
        }
        b[q] = if q == p { factorial(p) } else { 0.0 };
    }
    for (s, &node) in nodes.iter().enumerate() {
        a[p + 2][s] = exp_remainder(beta, node, p + 2);
    }
    b[p + 2] = 0.0;
    dense_solve_small(a, b)
}

/// Assembled sparse system for one mode.
pub struct ModeOperator {
    pub grid: Grid,
    pub mu: f64,
    pub eps: f64,
    pub gamma: f64,
    coo: CooMatrix,
    row_kinds: Vec<RowKind>,
}

/// Time levels carrying equation rows: `2 ..= nt-4` with the fifth-order
/// regularization, `1 ..= nt-3` without it.
pub fn equation_levels(nt: usize, eps: f64) -> std::ops::RangeInclusive<usize> {
    if eps > 0.0 {
        2..=nt - 4
    } else {
        1..=nt - 3
    }
}

/// `(derivative order, time slot)` pairs hosting the endpoint constraints.
pub fn constraint_slots(nt: usize, eps: f64) -> Vec<(usize, usize)> {
    if eps > 0.0 {
        vec![(0, 0), (1, 1), (2, nt - 3), (3, nt - 2), (4, nt - 1)]
    } else {
        vec![(0, 0), (1, nt - 2), (2, nt - 1)]
    }
}

/// Build the sparse operator for one mode.
pub fn assemble(
    spec: &ProblemSpec,
    grid: &Grid,
    mu: f64,
    eps: f64,
) -> Result<ModeOperator, OperatorError> {
    let nx = grid.nx;
    let nt = grid.nt;
    let n = nx * nt;
    let gamma = spec.gamma;

    let coeff_names = ["K0", "K1", "K2", "K3", "K4"];
    let mut k_fields: Vec<Field> = Vec::with_capacity(5);
    for (idx, e) in spec.k_coeffs.iter().enumerate() {
        let f = grid
            .sample_expr(e)
            .map_err(|source| OperatorError::Coefficient {
                name: coeff_names[idx],
                source,
            })?;
        k_fields.push(f);
    }

    let ts = t_stencils(grid.ht);
    let xs2 = x_stencil_2(grid.hx);
    let xs4 = x_stencil_4(grid.hx);
    let mu4 = mu.powi(4);

    let levels = equation_levels(nt, eps);
    let slots = constraint_slots(nt, eps);
    assert_eq!(
        levels.clone().count() + slots.len(),
        nt,
        "equation levels and constraint slots must tile the time axis"
    );

    let mut coo = CooMatrix::new(n);
    let mut row_kinds = vec![RowKind::Equation; n];

    // idx(i, j) with i in 1..=nx.
    let index = |i: i64, j: i64| -> usize { (i as usize - 1) * nt + j as usize };

    let push = |coo: &mut CooMatrix, row: usize, i: i64, j: i64, w: f64| {
        let (mut i, mut w) = (i, w);
        if i == 0 || i == nx as i64 + 1 {
            return; // Dirichlet: u = 0
        }
        if i == -1 {
            i = 1;
            w = -w; // odd reflection: u(-h) = -u(h)
        } else if i == nx as i64 + 2 {
            i = nx as i64;
            w = -w;
        }
        let mut j = j;
        if j < 0 {
            j += nt as i64 - 1;
            w /= gamma;
        } else if j > nt as i64 - 1 {
            j -= nt as i64 - 1;
            w *= gamma;
        }
        coo.push(row, index(i, j), w);
    };

    for i in 1..=nx as i64 {
        for j in levels.clone() {
            let j = j as i64;
            let row = index(i, j);
            let node = (i as usize, j as usize);

            for (d, stencil) in ts.iter().enumerate().take(5) {
                let kv = k_fields[d][node];
                if kv != 0.0 {
                    for &(off, w) in stencil {
                        push(&mut coo, row, i, j + off, kv * w);
                    }
                }
            }

            for &(xo, xw) in &xs4 {
                push(&mut coo, row, i + xo, j, -spec.a * xw);
            }
            for &(xo, xw) in &xs2 {
                for &(to, tw) in &ts[2] {
                    push(&mut coo, row, i + xo, j + to, -spec.b * xw * tw);
                }
                push(&mut coo, row, i + xo, j, spec.c * xw);
            }

            push(&mut coo, row, i, j, mu4);

            if eps > 0.0 {
                for &(to, tw) in &ts[5] {
                    push(&mut coo, row, i, j + to, -eps * tw);
                }
                for &(xo, xw) in &xs2 {
                    for &(to, tw) in &ts[3] {
                        push(&mut coo, row, i + xo, j + to, -2.0 * eps * xw * tw);
                    }
                }
                for &(xo, xw) in &xs4 {
                    for &(to, tw) in &ts[1] {
                        push(&mut coo, row, i + xo, j + to, -eps * xw * tw);
                    }
                }
            }
        }
    }

    // Endpoint constraint rows, shared weights across columns.
    let beta = spec.fitting_rate() * grid.ht;
    let fitted: Vec<(Vec<f64>, Vec<f64>)> = slots
        .iter()
        .map(|&(p, _)| {
            (
                fitted_endpoint_weights(p, beta, false),
                fitted_endpoint_weights(p, beta, true),
            )
        })
        .collect();
    for i in 1..=nx as i64 {
        for (&(p, slot), (left, right)) in slots.iter().zip(&fitted) {
            let row = index(i, slot as i64);
            row_kinds[row] = RowKind::Nonlocal(p);
            for (s, &w) in left.iter().enumerate() {
                coo.push(row, index(i, s as i64), gamma * w);
            }
            let base = nt as i64 - 1 - (p as i64 + 2);
            for (s, &w) in right.iter().enumerate() {
                coo.push(row, index(i, base + s as i64), -w);
            }
        }
    }

    Ok(ModeOperator {
        grid: grid.clone(),
        mu,
        eps,
        gamma,
        coo,
        row_kinds,
    })
}

impl ModeOperator {
    pub fn n_unknowns(&self) -> usize {
        self.grid.nx * self.grid.nt
    }

    pub fn coo(&self) -> &CooMatrix {
        &self.coo
    }

    pub fn row_kinds(&self) -> &[RowKind] {
        &self.row_kinds
    }

    /// Row/column index of the unknown at interior x-node `i` (1-based) and
    /// time level `j`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.grid.nx && j < self.grid.nt);
        (i - 1) * self.grid.nt + j
    }

    /// Interior unknowns of a full-grid field, in matrix ordering.
    pub fn flatten(&self, field: &Field) -> Result<Vec<f64>, OperatorError> {
        self.check_shape(field)?;
        let mut v = Vec::with_capacity(self.n_unknowns());
        for i in 1..=self.grid.nx {
            for j in 0..self.grid.nt {
                v.push(field[(i, j)]);
            }
        }
        Ok(v)
    }

    /// Expand a solution vector to a full-grid field; boundary x-columns are
    /// identically zero by the Dirichlet condition.
    pub fn unflatten(&self, v: &[f64]) -> Field {
        let mut out = self.grid.zeros();
        for i in 1..=self.grid.nx {
            for j in 0..self.grid.nt {
                out[(i, j)] = v[(i - 1) * self.grid.nt + j];
            }
        }
        out
    }

    fn check_shape(&self, field: &Field) -> Result<(), OperatorError> {
        let got = field.dim();
        if got != (self.grid.nx_total(), self.grid.nt) {
            return Err(OperatorError::ShapeMismatch {
                got,
                want_rows: self.grid.nx_total(),
                want_cols: self.grid.nt,
            });
        }
        Ok(())
    }

    /// Operator action on a full-grid field, reshaped back to the grid
    /// (constraint rows land at their host slots).
    pub fn apply(&self, field: &Field) -> Result<Field, OperatorError> {
        let v = self.flatten(field)?;
        let out = self.coo.matvec(&v)?;
        Ok(self.unflatten(&out))
    }

    /// Right-hand-side vector for a solve: the forcing field at equation
    /// rows, zero at the homogeneous constraint rows.
    pub fn rhs_vector(&self, forcing: &Field) -> Result<Vec<f64>, OperatorError> {
        self.check_shape(forcing)?;
        let mut b = vec![0.0; self.n_unknowns()];
        for i in 1..=self.grid.nx {
            for j in 0..self.grid.nt {
                let row = self.index(i, j);
                if self.row_kinds[row] == RowKind::Equation {
                    b[row] = forcing[(i, j)];
                }
            }
        }
        Ok(b)
    }

    /// Band factorization of the assembled matrix.
    pub fn factor(&self) -> Result<BandLu, OperatorError> {
        Ok(BandMatrix::from_coo(&self.coo)?.factor()?)
    }

    /// Coordinate-format text dump (`row col value` per line) for debugging.
    pub fn coordinate_dump(&self) -> String {
        let mut out = String::new();
        for &(r, c, v) in self.coo.triplets() {
            out.push_str(&format!("{r} {c} {v:.16e}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use std::f64::consts::{E, PI};

    fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    fn bare_spec() -> ProblemSpec {
        ProblemSpec {
            k_coeffs: [num(0.0), num(0.0), num(0.0), num(0.0), num(0.0)],
            a: 0.0,
            b: 0.0,
            c: 0.0,
            gamma: E,
            t_end: 1.0,
            ell: PI,
            ell0: 1.0,
            f: num(1.0),
            g: num(0.0),
            phi0: num(0.0),
            eta: 1.0,
        }
    }

    fn full_spec() -> ProblemSpec {
        ProblemSpec {
            k_coeffs: [
                num(-1.0),
                num(-1.0),
                num(0.0),
                num(2.0),
                Expr::parse("t*(1 - t)").unwrap(),
            ],
            a: 1.0,
            b: 1.0,
            c: 1.0,
            ..bare_spec()
        }
    }

    /// L2-normalized residual of the operator action against an analytic
    /// field over equation rows only.
    fn equation_row_error(op: &ModeOperator, input: &Field, expect: &Field) -> f64 {
        let action = op.apply(input).unwrap();
        let g = &op.grid;
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 1..=g.nx {
            for j in 0..g.nt {
                if op.row_kinds()[op.index(i, j)] == RowKind::Equation {
                    let d = action[(i, j)] - expect[(i, j)];
                    err += d * d;
                    norm += expect[(i, j)] * expect[(i, j)];
                }
            }
        }
        (err / norm).sqrt()
    }

    #[test]
    fn counting_invariant_with_and_without_regularization() {
        let grid = Grid::new(9, 12, 1.0).unwrap();
        let spec = bare_spec();
        for (eps, constraints) in [(1e-3, 5usize), (0.0, 3usize)] {
            let op = assemble(&spec, &grid, 1.0, eps).unwrap();
            for i in 1..=grid.nx {
                let col = &op.row_kinds()[(i - 1) * grid.nt..i * grid.nt];
                let eq = col.iter().filter(|k| **k == RowKind::Equation).count();
                let nl = col.iter().filter(|k| matches!(k, RowKind::Nonlocal(_))).count();
                assert_eq!(nl, constraints);
                assert_eq!(eq, grid.nt - constraints);
            }
            // All derivative orders present exactly once per column.
            let mut orders: Vec<usize> = op
                .row_kinds()
                .iter()
                .take(grid.nt)
                .filter_map(|k| match k {
                    RowKind::Nonlocal(p) => Some(*p),
                    _ => None,
                })
                .collect();
            orders.sort_unstable();
            assert_eq!(orders, (0..constraints).collect::<Vec<_>>());
        }
    }

    #[test]
    fn spatial_part_acts_like_minus_m_plus_mu4_on_sine() {
        // All K_i = 0, eps = 0: action = -(a pi^4 + c pi^2) u + mu^4 u on
        // u = sin(pi x), constant in time.
        let grid = Grid::new(31, 17, 1.0).unwrap();
        let mut spec = bare_spec();
        spec.a = 2.0;
        spec.b = 1.5;
        spec.c = 0.7;
        let mu = 1.3f64;
        let op = assemble(&spec, &grid, mu, 0.0).unwrap();
        let u = grid.sample(|x, _| (PI * x).sin());
        let factor = mu.powi(4) - spec.a * PI.powi(4) - spec.c * PI.powi(2);
        let expect = grid.sample(|x, _| factor * (PI * x).sin());
        let rel = equation_row_error(&op, &u, &expect);
        assert!(rel < 2e-3, "relative error {rel}");
    }

    #[test]
    fn navier_reflection_keeps_fourth_derivative_accurate_at_the_wall() {
        let grid = Grid::new(31, 17, 1.0).unwrap();
        let mut spec = bare_spec();
        spec.a = 1.0;
        let op = assemble(&spec, &grid, 0.0, 0.0).unwrap();
        let u = grid.sample(|x, _| (PI * x).sin());
        let action = op.apply(&u).unwrap();
        // First interior node, any equation level: -Dx^4 sin = -pi^4 sin.
        let j = grid.nt / 2;
        let want = -PI.powi(4) * (PI * grid.x(1)).sin();
        let got = action[(1, j)];
        assert!(
            (got - want).abs() <= 1e-2 * want.abs(),
            "got {got}, want {want}"
        );
    }

    #[test]
    fn regularization_term_matches_fifth_derivative_of_exponential() {
        // Everything else off: the action reduces to -eps * Dt^5. On
        // u = e^{nu t} (x-constant in the interior) this is -eps nu^5 e^{nu t}.
        let grid = Grid::new(15, 33, 1.0).unwrap();
        let spec = bare_spec();
        let eps = 0.75;
        let nu = spec.fitting_rate(); // ln(gamma)/T = 1
        let op = assemble(&spec, &grid, 0.0, eps).unwrap();
        let u = grid.sample(|_, t| (nu * t).exp());
        let action = op.apply(&u).unwrap();
        // Stay clear of x-ghost legs (they see the non-sine x-profile).
        for i in 3..=grid.nx - 2 {
            for j in equation_levels(grid.nt, eps) {
                let want = -eps * nu.powi(5) * (nu * grid.t(j)).exp();
                let got = action[(i, j)];
                assert!(
                    (got - want).abs() <= 3e-3 * want.abs(),
                    "node ({i},{j}): got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn apply_is_linear_and_zero_on_zero() {
        let grid = Grid::new(9, 11, 1.0).unwrap();
        let op = assemble(&full_spec(), &grid, 2.0, 1e-2).unwrap();
        let zero = op.apply(&grid.zeros()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let u1 = grid.sample(|x, t| (PI * x).sin() * (1.0 + t));
        let u2 = grid.sample(|x, t| (2.0 * PI * x).sin() * t.exp());
        let lhs = op.apply(&(&u1 + &u2)).unwrap();
        let rhs = op.apply(&u1).unwrap() + op.apply(&u2).unwrap();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn nonlocal_rows_annihilate_compatible_exponentials() {
        let grid = Grid::new(9, 33, 1.0).unwrap();
        let spec = full_spec();
        let nu = spec.fitting_rate();
        for eps in [1e-2, 0.0] {
            let op = assemble(&spec, &grid, 1.0, eps).unwrap();
            // Arbitrary x-profile: the rows act per column.
            let u = grid.sample(|x, t| (nu * t).exp() * ((PI * x).sin() + 0.4 * x * (1.0 - x)));
            let v = op.flatten(&u).unwrap();
            let residual = op.coo().matvec(&v).unwrap();
            // Per-row magnitude scale: sum |a_rc u_c|.
            let mut scale = vec![0.0; v.len()];
            for &(r, c, w) in op.coo().triplets() {
                scale[r] += (w * v[c]).abs();
            }
            for (row, kind) in op.row_kinds().iter().enumerate() {
                if matches!(kind, RowKind::Nonlocal(_)) {
                    let rel = residual[row].abs() / scale[row];
                    assert!(rel < 1e-12, "row {row} ({kind:?}): relative residual {rel}");
                }
            }
        }
    }

    #[test]
    fn equation_rows_converge_at_second_order_on_exponential_sine() {
        // u = e^{nu t} sin(pi x) gives the closed-form action
        // [sum K_i(t) - a pi^4 + b pi^2 - c pi^2 + mu^4 - eps (pi^2-1)^2] u
        // when nu = 1 (gamma = e, T = 1).
        let spec = full_spec();
        let mu = 2.0f64;
        let eps = 1e-2;
        let err_at = |n: usize| {
            let grid = Grid::new(n, n, 1.0).unwrap();
            let op = assemble(&spec, &grid, mu, eps).unwrap();
            let u = grid.sample(|x, t| t.exp() * (PI * x).sin());
            let expect = grid.sample(|x, t| {
                let ksum = -1.0 - 1.0 + 0.0 + 2.0 + t * (1.0 - t);
                let factor = ksum - PI.powi(4) + PI.powi(2) - PI.powi(2) + mu.powi(4)
                    - eps * (PI.powi(2) - 1.0).powi(2);
                factor * t.exp() * (PI * x).sin()
            });
            equation_row_error(&op, &u, &expect)
        };
        let e1 = err_at(17);
        let e2 = err_at(33);
        let order = (e1 / e2).log2();
        assert!(order > 1.6, "observed order {order} (errors {e1}, {e2})");
    }

    #[test]
    fn fitted_weights_recover_plain_endpoint_identity_for_p0() {
        // For p = 0 the fitted row must collapse to evaluation at the
        // endpoint: gamma u(0) - u(T).
        let w = fitted_endpoint_weights(0, 0.03, false);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!(w[1].abs() < 1e-12);
        assert!(w[2].abs() < 1e-12);
        let w = fitted_endpoint_weights(0, 0.03, true);
        assert!((w[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fitted_weights_differentiate_polynomials_and_exponential() {
        let beta = 0.17;
        for p in 0..=4usize {
            let n = p + 3;
            let left = fitted_endpoint_weights(p, beta, false);
            // Exact on s^q, q <= p+1.
            for q in 0..=(p + 1) {
                let got: f64 = left
                    .iter()
                    .enumerate()
                    .map(|(s, &w)| w * (s as f64).powi(q as i32))
                    .sum();
                let want = if q == p { factorial(p) } else { 0.0 };
                assert!(
                    (got - want).abs() < 1e-8,
                    "p={p} q={q}: got {got}, want {want}"
                );
            }
            // Exact on e^{beta s}.
            let got: f64 = left
                .iter()
                .enumerate()
                .map(|(s, &w)| w * (beta * s as f64).exp())
                .sum();
            let want = beta.powi(p as i32);
            assert!(
                (got - want).abs() < 1e-10 * want.abs().max(1.0),
                "p={p}: exponential action {got}, want {want}"
            );
            assert_eq!(left.len(), n);
        }
    }

    #[test]
    fn exp_remainder_series_and_direct_branches_agree() {
        // Straddle the branch switch at |beta s| = 2.
        for &(beta, s) in &[(0.124f64, 4.0f64), (0.9, 3.0), (0.8, -3.1), (0.5, 5.2)] {
            for start in 2..=6usize {
                let series = {
                    let mut term = s.powi(start as i32) / factorial(start);
                    let mut acc = term;
                    for r in (start + 1)..(start + 80) {
                        term *= beta * s / r as f64;
                        acc += term;
                    }
                    acc
                };
                let got = exp_remainder(beta, s, start);
                assert!(
                    (got - series).abs() <= 1e-12 * series.abs(),
                    "beta={beta} s={s} start={start}: {got} vs {series}"
                );
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let grid = Grid::new(9, 11, 1.0).unwrap();
        let op = assemble(&bare_spec(), &grid, 1.0, 0.0).unwrap();
        let wrong = ndarray::Array2::<f64>::zeros((4, 4));
        assert!(matches!(
            op.apply(&wrong),
            Err(OperatorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn coordinate_dump_lists_triplets() {
        let grid = Grid::new(9, 11, 1.0).unwrap();
        let op = assemble(&bare_spec(), &grid, 1.0, 0.0).unwrap();
        let dump = op.coordinate_dump();
        assert_eq!(dump.lines().count(), op.coo().triplets().len());
        let first = dump.lines().next().unwrap();
        assert_eq!(first.split_whitespace().count(), 3);
    }
}
