//! Banded LU factorization with partial pivoting.
//!
//! The mode operators couple each unknown to a bounded index range (two
//! x-columns and a few time levels away, plus same-column endpoint wrap), so
//! LAPACK-style band storage with `kl` extra fill rows is the right shape:
//! factorization costs `O(n kl (kl + ku))` instead of `O(n^3)`.
//!
//! Rows are equilibrated (scaled by their largest magnitude) before
//! factorization: equation rows carry `1/ht^4`-sized entries while the
//! endpoint-constraint rows are `O(1)`, and without scaling the pivoting
//! order degrades. The scaling is applied to the right-hand side on solve,
//! so callers see the original system's solution.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BandError {
    #[error("numerically singular matrix: zero pivot at column {column}")]
    Singular { column: usize },
    #[error("triplet ({row}, {col}) outside {n}x{n} matrix")]
    OutOfRange { row: usize, col: usize, n: usize },
    #[error("dimension mismatch: matrix is {n}x{n}, vector has {len} entries")]
    DimensionMismatch { n: usize, len: usize },
}

/// Sparse matrix in coordinate form; duplicate entries accumulate.
#[derive(Debug, Clone)]
pub struct CooMatrix {
    pub n: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(n: usize) -> Self {
        CooMatrix {
            n,
            triplets: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        if value != 0.0 {
            self.triplets.push((row, col, value));
        }
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, BandError> {
        if x.len() != self.n {
            return Err(BandError::DimensionMismatch {
                n: self.n,
                len: x.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        for &(r, c, v) in &self.triplets {
            out[r] += v * x[c];
        }
        Ok(out)
    }

    /// Half-bandwidths `(kl, ku)` actually present.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0usize;
        let mut ku = 0usize;
        for &(r, c, _) in &self.triplets {
            if r >= c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        (kl, ku)
    }
}

/// Band storage ready for factorization.
#[derive(Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major, `ldab = 2 kl + ku + 1` rows per column; the top `kl`
    /// rows hold pivoting fill. `A(r, c)` lives at `[c * ldab + kl+ku+r-c]`.
    ab: Vec<f64>,
    /// Row equilibration factors applied to the stored matrix.
    row_scale: Vec<f64>,
}

impl BandMatrix {
    pub fn from_coo(coo: &CooMatrix) -> Result<Self, BandError> {
        let n = coo.n;
        let (kl, ku) = coo.bandwidths();
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for &(r, c, v) in coo.triplets() {
            if r >= n || c >= n {
                return Err(BandError::OutOfRange { row: r, col: c, n });
            }
            ab[c * ldab + (kl + ku + r - c)] += v;
        }
        // Equilibrate rows by their max magnitude.
        let mut row_max = vec![0.0f64; n];
        for c in 0..n {
            let lo = c.saturating_sub(ku);
            let hi = (c + kl).min(n - 1);
            for r in lo..=hi {
                row_max[r] = row_max[r].max(ab[c * ldab + (kl + ku + r - c)].abs());
            }
        }
        let row_scale: Vec<f64> = row_max
            .iter()
            .map(|&m| if m > 0.0 { 1.0 / m } else { 1.0 })
            .collect();
        for c in 0..n {
            let lo = c.saturating_sub(ku);
            let hi = (c + kl).min(n - 1);
            for r in lo..=hi {
                ab[c * ldab + (kl + ku + r - c)] *= row_scale[r];
            }
        }
        Ok(BandMatrix {
            n,
            kl,
            ku,
            ab,
            row_scale,
        })
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        c * (2 * self.kl + self.ku + 1) + (self.kl + self.ku + r - c)
    }

    /// LU factorization with partial pivoting, in place.
    pub fn factor(mut self) -> Result<BandLu, BandError> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0usize;
            let mut best = self.ab[self.idx(j, j)].abs();
            for q in 1..=km {
                let v = self.ab[self.idx(j + q, j)].abs();
                if v > best {
                    best = v;
                    p = q;
                }
            }
            if best == 0.0 {
                return Err(BandError::Singular { column: j });
            }
            ipiv[j] = j + p;
            let jend = (j + kl + ku).min(n - 1);
            if p > 0 {
                for c in j..=jend {
                    let a = self.idx(j, c);
                    let b = self.idx(j + p, c);
                    self.ab.swap(a, b);
                }
            }
            let piv = self.ab[self.idx(j, j)];
            for i in 1..=km {
                let a = self.idx(j + i, j);
                self.ab[a] /= piv;
            }
            for c in (j + 1)..=jend {
                let f = self.ab[self.idx(j, c)];
                if f != 0.0 {
                    for i in 1..=km {
                        let a = self.idx(j + i, c);
                        let m = self.ab[self.idx(j + i, j)];
                        self.ab[a] -= m * f;
                    }
                }
            }
        }
        Ok(BandLu { mat: self, ipiv })
    }
}

/// Factored operator; solves share the factorization.
#[derive(Debug)]
pub struct BandLu {
    mat: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn n(&self) -> usize {
        self.mat.n
    }

    /// Solve `A x = b`; `b` is overwritten by the solution.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), BandError> {
        let n = self.mat.n;
        if b.len() != n {
            return Err(BandError::DimensionMismatch { n, len: b.len() });
        }
        for (i, s) in self.mat.row_scale.iter().enumerate() {
            b[i] *= s;
        }
        let kl = self.mat.kl;
        let ku = self.mat.ku;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(p, j);
            }
            let km = kl.min(n - 1 - j);
            for i in 1..=km {
                b[j + i] -= self.mat.ab[self.mat.idx(j + i, j)] * b[j];
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.mat.ab[self.mat.idx(j, j)];
            let reach = (kl + ku).min(j);
            for i in 1..=reach {
                b[j - i] -= self.mat.ab[self.mat.idx(j - i, j)] * b[j];
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, BandError> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}
