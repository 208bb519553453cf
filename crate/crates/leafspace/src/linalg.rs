//! Symmetric tridiagonal and cyclic-tridiagonal linear algebra.
//!
//! Everything the discrete calculus needs reduces to systems with this
//! structure: Helmholtz solves, Newton polish steps, and Sturm-sequence
//! eigenvalue counts for the coercivity constant.

use crate::{Error, Result};

/// Symmetric matrix with tridiagonal structure, optionally closed into a
/// cycle by a corner entry coupling the first and last index.
#[derive(Debug, Clone)]
pub(crate) struct SymTridiag {
    pub diag: Vec<f64>,
    /// Couplings (i, i+1); length n-1.
    pub off: Vec<f64>,
    /// Coupling (0, n-1); only meaningful when `cyclic`.
    pub corner: f64,
    pub cyclic: bool,
}

impl SymTridiag {
    pub fn open(diag: Vec<f64>, off: Vec<f64>) -> Self {
        debug_assert_eq!(off.len() + 1, diag.len());
        SymTridiag { diag, off, corner: 0.0, cyclic: false }
    }

    pub fn cyclic(diag: Vec<f64>, off: Vec<f64>, corner: f64) -> Self {
        debug_assert_eq!(off.len() + 1, diag.len());
        debug_assert!(diag.len() >= 3);
        SymTridiag { diag, off, corner, cyclic: true }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut y = self.diag[i] * x[i];
            if i > 0 {
                y += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                y += self.off[i] * x[i + 1];
            }
            out[i] = y;
        }
        if self.cyclic {
            out[0] += self.corner * x[n - 1];
            out[n - 1] += self.corner * x[0];
        }
    }

    /// Forms `self - sigma * other` entrywise; structures must match.
    pub fn shifted_by(&self, other: &SymTridiag, sigma: f64) -> SymTridiag {
        debug_assert_eq!(self.n(), other.n());
        debug_assert_eq!(self.cyclic, other.cyclic);
        let diag = self
            .diag
            .iter()
            .zip(&other.diag)
            .map(|(a, b)| a - sigma * b)
            .collect();
        let off = self
            .off
            .iter()
            .zip(&other.off)
            .map(|(a, b)| a - sigma * b)
            .collect();
        SymTridiag {
            diag,
            off,
            corner: self.corner - sigma * other.corner,
            cyclic: self.cyclic,
        }
    }

    /// Number of eigenvalues strictly below zero, via the signs of the
    /// LDL^T pivots. Zero pivots are perturbed, the standard Sturm trick.
    pub fn negative_count(&self) -> usize {
        let n = self.n();
        let tiny = 1e-300;
        let mut count = 0;
        if !self.cyclic {
            let mut q = self.diag[0];
            if q == 0.0 {
                q = tiny;
            }
            if q < 0.0 {
                count += 1;
            }
            for i in 1..n {
                q = self.diag[i] - self.off[i - 1] * self.off[i - 1] / q;
                if q == 0.0 {
                    q = tiny;
                }
                if q < 0.0 {
                    count += 1;
                }
            }
            return count;
        }
        // Cyclic case: border the last index. Pivots of the leading
        // (n-1) x (n-1) tridiagonal block plus the Schur complement.
        let m = n - 1;
        let mut q = vec![0.0; m];
        q[0] = if self.diag[0] == 0.0 { tiny } else { self.diag[0] };
        for i in 1..m {
            let mut p = self.diag[i] - self.off[i - 1] * self.off[i - 1] / q[i - 1];
            if p == 0.0 {
                p = tiny;
            }
            q[i] = p;
        }
        count += q.iter().filter(|&&p| p < 0.0).count();
        // Spike column s: s[0] = corner, s[m-1] = off[m-1].
        let mut s = vec![0.0; m];
        s[0] = self.corner;
        s[m - 1] += self.off[m - 1];
        let y = tridiag_solve_with_pivots(&self.off[..m - 1], &q, &s);
        let schur = self.diag[m] - (self.corner * y[0] + self.off[m - 1] * y[m - 1]);
        if schur < 0.0 {
            count += 1;
        }
        count
    }
}

/// Solves T x = b for the tridiagonal T defined by `off` and the LDL^T
/// pivots `q` already computed from it.
fn tridiag_solve_with_pivots(off: &[f64], q: &[f64], b: &[f64]) -> Vec<f64> {
    let m = q.len();
    let mut z = vec![0.0; m];
    z[0] = b[0];
    for i in 1..m {
        z[i] = b[i] - off[i - 1] / q[i - 1] * z[i - 1];
    }
    let mut x = vec![0.0; m];
    x[m - 1] = z[m - 1] / q[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = z[i] / q[i] - off[i] / q[i] * x[i + 1];
    }
    x
}

/// LDL^T factorization of a [`SymTridiag`], reusable across solves.
///
/// Cyclic matrices are handled by bordering the last unknown, which keeps
/// the factorization exact (no Sherman-Morrison conditioning caveats).
#[derive(Debug, Clone)]
pub(crate) struct Factorized {
    n: usize,
    cyclic: bool,
    /// Pivots of the (possibly leading) tridiagonal block.
    q: Vec<f64>,
    off: Vec<f64>,
    corner: f64,
    last_off: f64,
    /// y = T^{-1} s for the bordered spike column.
    y: Vec<f64>,
    schur: f64,
}

impl Factorized {
    pub fn new(a: &SymTridiag) -> Result<Factorized> {
        let n = a.n();
        if !a.cyclic {
            let mut q = vec![0.0; n];
            q[0] = a.diag[0];
            if q[0].abs() < 1e-300 {
                return Err(Error::SingularSystem(q[0]));
            }
            for i in 1..n {
                q[i] = a.diag[i] - a.off[i - 1] * a.off[i - 1] / q[i - 1];
                if q[i].abs() < 1e-300 || !q[i].is_finite() {
                    return Err(Error::SingularSystem(q[i]));
                }
            }
            return Ok(Factorized {
                n,
                cyclic: false,
                q,
                off: a.off.clone(),
                corner: 0.0,
                last_off: 0.0,
                y: Vec::new(),
                schur: 0.0,
            });
        }
        let m = n - 1;
        let mut q = vec![0.0; m];
        q[0] = a.diag[0];
        if q[0].abs() < 1e-300 {
            return Err(Error::SingularSystem(q[0]));
        }
        for i in 1..m {
            q[i] = a.diag[i] - a.off[i - 1] * a.off[i - 1] / q[i - 1];
            if q[i].abs() < 1e-300 || !q[i].is_finite() {
                return Err(Error::SingularSystem(q[i]));
            }
        }
        let mut s = vec![0.0; m];
        s[0] = a.corner;
        s[m - 1] += a.off[m - 1];
        let y = tridiag_solve_with_pivots(&a.off[..m - 1], &q, &s);
        let schur = a.diag[m] - (a.corner * y[0] + a.off[m - 1] * y[m - 1]);
        if schur.abs() < 1e-300 || !schur.is_finite() {
            return Err(Error::SingularSystem(schur));
        }
        Ok(Factorized {
            n,
            cyclic: true,
            q,
            off: a.off[..m - 1].to_vec(),
            corner: a.corner,
            last_off: a.off[m - 1],
            y,
            schur,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        if !self.cyclic {
            return tridiag_solve_with_pivots(&self.off, &self.q, b);
        }
        let m = self.n - 1;
        let t = tridiag_solve_with_pivots(&self.off, &self.q, &b[..m]);
        let st = self.corner * t[0] + self.last_off * t[m - 1];
        let xi = (b[m] - st) / self.schur;
        let mut x = Vec::with_capacity(self.n);
        for i in 0..m {
            x.push(t[i] - xi * self.y[i]);
        }
        x.push(xi);
        x
    }
}
