//! Uniform product grid on `Q = (0, 1) x (0, T)`.
//!
//! `nx` counts *interior* x-nodes; the stored fields always include the two
//! boundary columns, so a field has `nx + 2` rows. `nt` counts time levels
//! including both endpoints, so `t[0] = 0` and `t[nt - 1] = T` exactly.

use ndarray::Array2;
use thiserror::Error;

use crate::expr::{Bindings, EvalError, Expr};

/// Scalar field sampled on the full grid, indexed `[x-node, time-level]`.
pub type Field = Array2<f64>;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("need at least 7 interior x-nodes, got {0}")]
    TooFewXNodes(usize),
    #[error("need at least 9 time levels, got {0}")]
    TooFewTimeLevels(usize),
    #[error("time extent must be positive and finite, got {0}")]
    BadTimeExtent(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// Interior x-node count.
    pub nx: usize,
    /// Time-level count, endpoints included.
    pub nt: usize,
    /// Time extent `T`.
    pub t_end: f64,
    pub hx: f64,
    pub ht: f64,
}

impl Grid {
    pub fn new(nx: usize, nt: usize, t_end: f64) -> Result<Self, GridError> {
        if nx < 7 {
            return Err(GridError::TooFewXNodes(nx));
        }
        if nt < 9 {
            return Err(GridError::TooFewTimeLevels(nt));
        }
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(GridError::BadTimeExtent(t_end));
        }
        Ok(Grid {
            nx,
            nt,
            t_end,
            hx: 1.0 / (nx as f64 + 1.0),
            ht: t_end / (nt as f64 - 1.0),
        })
    }

    /// Total x-node count including both boundaries.
    pub fn nx_total(&self) -> usize {
        self.nx + 2
    }

    /// x-coordinate of node `i`, `i = 0 ..= nx + 1`.
    pub fn x(&self, i: usize) -> f64 {
        if i == self.nx + 1 {
            1.0
        } else {
            i as f64 * self.hx
        }
    }

    /// t-coordinate of level `j`, `j = 0 .. nt`.
    pub fn t(&self, j: usize) -> f64 {
        if j == self.nt - 1 {
            self.t_end
        } else {
            j as f64 * self.ht
        }
    }

    /// Zero field over the full grid.
    pub fn zeros(&self) -> Field {
        Array2::zeros((self.nx_total(), self.nt))
    }

    /// Sample a function of `(x, t)` over the full grid.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Array2::from_shape_fn((self.nx_total(), self.nt), |(i, j)| f(self.x(i), self.t(j)))
    }

    /// Sample an expression in `x` and `t` over the full grid; `y` is bound
    /// to zero and must not occur.
    pub fn sample_expr(&self, e: &Expr) -> Result<Field, EvalError> {
        let mut out = self.zeros();
        for i in 0..self.nx_total() {
            for j in 0..self.nt {
                out[(i, j)] = e.eval(&Bindings::xt(self.x(i), self.t(j)))?;
            }
        }
        Ok(out)
    }

    /// Trapezoid weight of x-node `i`.
    pub fn wx(&self, i: usize) -> f64 {
        if i == 0 || i == self.nx + 1 {
            self.hx / 2.0
        } else {
            self.hx
        }
    }

    /// Trapezoid weight of time level `j`.
    pub fn wt(&self, j: usize) -> f64 {
        if j == 0 || j == self.nt - 1 {
            self.ht / 2.0
        } else {
            self.ht
        }
    }

    /// Trapezoid `L2(Q)` norm of a full-grid field.
    pub fn l2_norm(&self, field: &Field) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.nx_total() {
            let wx = self.wx(i);
            for j in 0..self.nt {
                acc += wx * self.wt(j) * field[(i, j)] * field[(i, j)];
            }
        }
        acc.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_matches_counts() {
        let g = Grid::new(9, 11, 1.0).unwrap();
        assert!((g.hx - 0.1).abs() < 1e-15);
        assert!((g.ht - 0.1).abs() < 1e-15);
        assert_eq!(g.nx_total(), 11);
        assert_eq!(g.x(0), 0.0);
        assert_eq!(g.x(10), 1.0);
        assert_eq!(g.t(10), 1.0);
    }

    #[test]
    fn endpoints_exact_even_for_awkward_extent() {
        let g = Grid::new(7, 13, 0.3).unwrap();
        assert_eq!(g.t(12), 0.3);
        assert_eq!(g.t(0), 0.0);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(3, 11, 1.0).is_err());
        assert!(Grid::new(9, 5, 1.0).is_err());
        assert!(Grid::new(9, 11, 0.0).is_err());
        assert!(Grid::new(9, 11, f64::NAN).is_err());
    }

    #[test]
    fn l2_of_unit_field_is_domain_measure() {
        let g = Grid::new(15, 17, 2.0).unwrap();
        let ones = g.sample(|_, _| 1.0);
        // |Q| = 1 * 2, norm = sqrt(2)
        assert!((g.l2_norm(&ones) - 2.0_f64.sqrt()).abs() < 1e-12);
    }
}
