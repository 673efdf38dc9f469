//! Banded LU factorization with partial pivoting for complex matrices.
//!
//! Storage follows the LAPACK `gbtrf` convention: column-major with leading
//! dimension `2*kl + ku + 1`, so row interchanges can fill in up to `kl + ku`
//! superdiagonals of `U` without reallocating.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CMatrix, C64};

/// Relative pivot threshold below which the matrix is declared singular.
pub const PIVOT_TOL: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            data: vec![C64::new(0.0, 0.0); ld * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.ku >= j && i <= j + self.kl);
        j * self.ld + self.kl + self.ku + i - j
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && i <= j + self.kl
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            C64::new(0.0, 0.0)
        }
    }

    /// Panics if `(i, j)` lies outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn to_dense(&self) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku, ld) = (self.n, self.kl, self.ku, self.ld);
        let scale = self.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let thresh = PIVOT_TOL * scale;
        let mut ipiv = vec![0usize; n];
        let a = &mut self.data;
        let at = |i: usize, j: usize| j * ld + kl + ku + i - j;

        for k in 0..n {
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a[at(k, k)].norm();
            for i in k + 1..=imax {
                let v = a[at(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= thresh || best == 0.0 {
                return Err(Error::SingularOperator { index: k, magnitude: best });
            }
            ipiv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    a.swap(at(k, j), at(p, j));
                }
            }
            let inv = a[at(k, k)].inv();
            let c0 = at(k + 1, k);
            let c1 = c0 + (imax - k);
            for v in &mut a[c0..c1] {
                *v *= inv;
            }
            for j in k + 1..=jmax {
                let akj = a[at(k, j)];
                if akj == C64::new(0.0, 0.0) {
                    continue;
                }
                // column j lies entirely after column k in storage
                let (lo, hi) = a.split_at_mut(at(k + 1, j));
                for (t, l) in hi[..imax - k].iter_mut().zip(&lo[c0..c1]) {
                    *t -= l * akj;
                }
            }
        }
        Ok(BandLu { band: self, ipiv })
    }
}

/// Factored band matrix; immutable and shareable across threads.
#[derive(Clone, Debug)]
pub struct BandLu {
    band: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.band.n
    }

    fn solve_in_place(&self, b: &mut [C64]) {
        let BandMatrix { n, kl, ku, ld, .. } = self.band;
        let a = &self.band.data;
        let at = |i: usize, j: usize| j * ld + kl + ku + i - j;
        for k in 0..n {
            let p = self.ipiv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == C64::new(0.0, 0.0) {
                continue;
            }
            let imax = (k + kl).min(n - 1);
            let c0 = at(k + 1, k);
            for (bi, l) in b[k + 1..=imax].iter_mut().zip(&a[c0..c0 + imax - k]) {
                *bi -= l * bk;
            }
        }
        for k in (0..n).rev() {
            b[k] /= a[at(k, k)];
            let bk = b[k];
            if bk == C64::new(0.0, 0.0) {
                continue;
            }
            let i0 = k.saturating_sub(kl + ku);
            let c0 = at(i0, k);
            for (bi, u) in b[i0..k].iter_mut().zip(&a[c0..c0 + k - i0]) {
                *bi -= u * bk;
            }
        }
    }

    fn solve_adjoint_in_place(&self, b: &mut [C64]) {
        let BandMatrix { n, kl, ku, ld, .. } = self.band;
        let a = &self.band.data;
        let at = |i: usize, j: usize| j * ld + kl + ku + i - j;
        // Uᴴ y = b
        for k in 0..n {
            let i0 = k.saturating_sub(kl + ku);
            let c0 = at(i0, k);
            let mut s = b[k];
            for (bi, u) in b[i0..k].iter().zip(&a[c0..c0 + k - i0]) {
                s -= u.conj() * bi;
            }
            b[k] = s / a[at(k, k)].conj();
        }
        // x = P₀ L₀⁻ᴴ ... P_{n-1} L_{n-1}⁻ᴴ y
        for k in (0..n).rev() {
            let imax = (k + kl).min(n - 1);
            let c0 = at(k + 1, k);
            let mut s = C64::new(0.0, 0.0);
            for (bi, l) in b[k + 1..=imax].iter().zip(&a[c0..c0 + imax - k]) {
                s += l.conj() * bi;
            }
            b[k] -= s;
            let p = self.ipiv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }

    fn check_rows(&self, rhs: &CMatrix) -> Result<()> {
        if rhs.nrows() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: (self.dim(), rhs.ncols()),
                found: rhs.shape(),
            });
        }
        Ok(())
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, rhs: &CMatrix) -> Result<CMatrix> {
        self.check_rows(rhs)?;
        let mut x = rhs.clone();
        let n = self.dim();
        if n > 0 {
            x.as_mut_slice().par_chunks_mut(n).for_each(|col| self.solve_in_place(col));
        }
        Ok(x)
    }

    /// Solves `Aᴴ X = B` reusing the same factors.
    pub fn solve_adjoint(&self, rhs: &CMatrix) -> Result<CMatrix> {
        self.check_rows(rhs)?;
        let mut x = rhs.clone();
        let n = self.dim();
        if n > 0 {
            x.as_mut_slice().par_chunks_mut(n).for_each(|col| self.solve_adjoint_in_place(col));
        }
        Ok(x)
    }
}
