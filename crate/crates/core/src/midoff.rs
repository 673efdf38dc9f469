//! Midpoint-offset transform.
//!
//! Source-receiver entry `(r, c)` maps to `(r + c, r − c + nr − 1)` in a
//! square `(ns + nr − 1)²` array: a 45° rotation with integer midpoint and
//! offset axes (the half-integer coordinates `(r ± c)/2` scaled by two). The
//! image is a checkerboard; entries off it are zero after [`to_midoff`] and
//! ignored by [`from_midoff`], so `T*T = I` and `TT*` is the projection onto
//! the checkerboard.

use crate::error::{Error, Result};
use crate::model::{BoolMatrix, CMatrix, Domain, FrequencySlice, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MidOffMap {
    pub ns: usize,
    pub nr: usize,
}

impl MidOffMap {
    pub fn new(ns: usize, nr: usize) -> Result<Self> {
        if ns == 0 || nr == 0 {
            return Err(Error::BadShape(format!("empty survey {ns}x{nr}")));
        }
        Ok(Self { ns, nr })
    }

    pub fn dim(&self) -> usize {
        self.ns + self.nr - 1
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize) -> (usize, usize) {
        (r + c, r + self.nr - 1 - c)
    }

    /// Inverse of [`Self::index`] on the support; `None` off it.
    pub fn source_receiver(&self, mid: usize, off: usize) -> Option<(usize, usize)> {
        // mid = r + c, off = r - c + nr - 1  ⇒  2r = mid + off - (nr - 1)
        let s = (mid + off).checked_sub(self.nr - 1)?;
        if s % 2 != 0 {
            return None;
        }
        let r = s / 2;
        let c = mid.checked_sub(r)?;
        (r < self.ns && c < self.nr).then_some((r, c))
    }

    pub fn support(&self) -> BoolMatrix {
        let mut s = BoolMatrix::from_element(self.dim(), self.dim(), false);
        for r in 0..self.ns {
            for c in 0..self.nr {
                s[self.index(r, c)] = true;
            }
        }
        s
    }

    pub fn domain(&self) -> Domain {
        Domain::MidpointOffset { ns: self.ns, nr: self.nr }
    }

    /// `T` on a raw `ns × nr` matrix.
    pub fn forward(&self, d: &CMatrix) -> Result<CMatrix> {
        if d.shape() != (self.ns, self.nr) {
            return Err(Error::ShapeMismatch {
                expected: (self.ns, self.nr),
                found: d.shape(),
            });
        }
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for c in 0..self.nr {
            for r in 0..self.ns {
                out[self.index(r, c)] = d[(r, c)];
            }
        }
        Ok(out)
    }

    /// `T*` on a raw square matrix.
    pub fn adjoint(&self, y: &CMatrix) -> Result<CMatrix> {
        let n = self.dim();
        if y.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                expected: (n, n),
                found: y.shape(),
            });
        }
        Ok(CMatrix::from_fn(self.ns, self.nr, |r, c| y[self.index(r, c)]))
    }

    /// Zeroes entries off the checkerboard (`TT*`).
    pub fn project(&self, y: &CMatrix) -> Result<CMatrix> {
        self.forward(&self.adjoint(y)?)
    }
}

pub fn to_midoff(d: &FrequencySlice) -> Result<FrequencySlice> {
    if d.domain != Domain::SourceReceiver {
        return Err(Error::WrongDomain {
            expected: Domain::SourceReceiver.name(),
            found: d.domain.name(),
        });
    }
    let (ns, nr) = d.shape();
    let map = MidOffMap::new(ns, nr)?;
    FrequencySlice::new(d.omega, map.domain(), map.forward(&d.data)?)
}

pub fn from_midoff(y: &FrequencySlice) -> Result<FrequencySlice> {
    let Domain::MidpointOffset { ns, nr } = y.domain else {
        return Err(Error::WrongDomain {
            expected: "midpoint-offset",
            found: y.domain.name(),
        });
    };
    let map = MidOffMap::new(ns, nr)?;
    FrequencySlice::source_receiver(y.omega, map.adjoint(&y.data)?)
}

/// Complex inner product `⟨a, b⟩ = Σ conj(a) b`.
pub fn inner(a: &CMatrix, b: &CMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}
