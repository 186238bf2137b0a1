//! Shared fixtures for the kernel benchmarks: one representative problem
//! with a degenerate leading coefficient and a three-mode load shape.

use loadstone_core::{Expr, Grid, ProblemSpec};

pub fn sample_spec() -> ProblemSpec {
    let spec = ProblemSpec {
        k_coeffs: [
            Expr::Num(-1.0),
            Expr::Num(-1.0),
            Expr::Num(0.0),
            Expr::Num(2.0),
            Expr::parse("t*(1 - t)").unwrap(),
        ],
        a: 1.0,
        b: 1.0,
        c: 1.0,
        gamma: std::f64::consts::E,
        t_end: 1.0,
        ell: std::f64::consts::PI,
        ell0: 1.0,
        f: Expr::parse("exp(t) * (sin(y) + 0.3*sin(2*y) + 0.1*sin(3*y))").unwrap(),
        g: Expr::parse("exp(t) * sin(pi*x) * sin(y)").unwrap(),
        phi0: Expr::parse("exp(t) * sin(pi*x)").unwrap(),
        eta: 1.0,
    };
    spec.validate().unwrap();
    spec
}

pub fn sample_grid(n: usize) -> Grid {
    Grid::new(n, n, 1.0).unwrap()
}
