//! Discrete constant-density acoustic Helmholtz operator
//! `H(m) = ω² diag(m) + ∇²_h` with a first-order absorbing boundary.
//!
//! Interior nodes use the 5-point Laplacian. A node on an edge couples only
//! to its inward neighbour through the one-sided condition
//! `∂u/∂n − iω√m u = 0`, scaled by `-1/h` so its off-diagonal entry is `1/h²`
//! like the interior stencil; this keeps `H` complex symmetric (`Hᵀ = H`),
//! which gives source-receiver reciprocity. Corner nodes have no interior
//! neighbour and carry the sum of both edge conditions on the diagonal only.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use crate::banded::{BandLu, BandMatrix};
use crate::error::{Error, Result};
use crate::model::{validate_model, CMatrix, ModelGrid, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Boundary {
    /// First-order Sommerfeld condition on all four edges.
    #[default]
    Absorbing,
    /// Same one-sided rows without the `iω√m` term. Reflecting; `H` is real
    /// symmetric. Used for toy checks only.
    Neumann,
}

/// Counts PDE solves (one per right-hand-side column).
#[derive(Clone, Debug, Default)]
pub struct PdeCounter(Arc<AtomicU64>);

impl PdeCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// One row of the 5-point operator: diagonal plus up to four couplings of
/// weight `1/h²`.
#[derive(Clone, Debug)]
struct StencilRow {
    diag: C64,
    neighbors: [usize; 4],
    count: u8,
}

pub struct HelmholtzOperator {
    grid: ModelGrid,
    omega: f64,
    boundary: Boundary,
    rows: Vec<StencilRow>,
    lu: OnceLock<std::result::Result<Arc<BandLu>, (usize, f64)>>,
    counter: Option<PdeCounter>,
}

impl std::fmt::Debug for HelmholtzOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HelmholtzOperator")
            .field("nz", &self.grid.nz)
            .field("nx", &self.grid.nx)
            .field("omega", &self.omega)
            .field("boundary", &self.boundary)
            .field("factored", &self.lu.get().is_some())
            .finish()
    }
}

/// Assembles `H(m)` at angular frequency `omega` with absorbing edges.
pub fn assemble(g: &ModelGrid, omega: f64) -> Result<HelmholtzOperator> {
    HelmholtzOperator::new(g, omega, Boundary::Absorbing)
}

impl HelmholtzOperator {
    pub fn new(g: &ModelGrid, omega: f64, boundary: Boundary) -> Result<Self> {
        validate_model(g)?;
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidArgument(format!("omega must be positive, got {omega}")));
        }
        let (nz, nx) = (g.nz, g.nx);
        let inv_h2 = 1.0 / (g.h * g.h);
        let mut rows = Vec::with_capacity(g.len());
        for ix in 0..nx {
            for iz in 0..nz {
                let i = g.index(iz, ix);
                let mut row = StencilRow {
                    diag: C64::new(0.0, 0.0),
                    neighbors: [0; 4],
                    count: 0,
                };
                let on_z_edge = iz == 0 || iz + 1 == nz;
                let on_x_edge = ix == 0 || ix + 1 == nx;
                if !on_z_edge && !on_x_edge {
                    row.diag = C64::new(omega * omega * g.m[i] - 4.0 * inv_h2, 0.0);
                    row.neighbors = [i - 1, i + 1, i - nz, i + nz];
                    row.count = 4;
                } else {
                    let edges = on_z_edge as u8 + on_x_edge as u8;
                    if edges == 1 {
                        let inward = if iz == 0 {
                            i + 1
                        } else if iz + 1 == nz {
                            i - 1
                        } else if ix == 0 {
                            i + nz
                        } else {
                            i - nz
                        };
                        row.neighbors[0] = inward;
                        row.count = 1;
                    }
                    let absorb = match boundary {
                        Boundary::Absorbing => omega * g.m[i].sqrt() / g.h,
                        Boundary::Neumann => 0.0,
                    };
                    let e = edges as f64;
                    row.diag = C64::new(-e * inv_h2, e * absorb);
                }
                rows.push(row);
            }
        }
        Ok(Self {
            grid: g.clone(),
            omega,
            boundary,
            rows,
            lu: OnceLock::new(),
            counter: None,
        })
    }

    pub fn with_counter(mut self, counter: PdeCounter) -> Self {
        self.counter = Some(counter);
        self
    }

    pub fn grid(&self) -> &ModelGrid {
        &self.grid
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Lower/upper bandwidth in z-fastest ordering.
    pub fn bandwidth(&self) -> usize {
        self.grid.nz
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        let row = &self.rows[i];
        if i == j {
            return row.diag;
        }
        let h = self.grid.h;
        if row.neighbors[..row.count as usize].contains(&j) {
            C64::new(1.0 / (h * h), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    }

    /// Derivative of the diagonal entry `i` with respect to `m_i`; the operator
    /// depends on `m` only through its diagonal.
    pub fn diag_derivative(&self, i: usize) -> C64 {
        let g = &self.grid;
        let (iz, ix) = (i % g.nz, i / g.nz);
        if !g.is_boundary(iz, ix) {
            return C64::new(self.omega * self.omega, 0.0);
        }
        match self.boundary {
            Boundary::Neumann => C64::new(0.0, 0.0),
            Boundary::Absorbing => {
                let edges = (iz == 0 || iz + 1 == g.nz) as u8 + (ix == 0 || ix + 1 == g.nx) as u8;
                C64::new(0.0, edges as f64 * self.omega / (2.0 * g.h * g.m[i].sqrt()))
            }
        }
    }

    /// `H · x` for a block of columns.
    pub fn apply(&self, x: &CMatrix) -> Result<CMatrix> {
        let n = self.dim();
        if x.nrows() != n {
            return Err(Error::ShapeMismatch {
                expected: (n, x.ncols()),
                found: x.shape(),
            });
        }
        let w = 1.0 / (self.grid.h * self.grid.h);
        let mut y = CMatrix::zeros(n, x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            let mut yc = y.column_mut(c);
            for (i, row) in self.rows.iter().enumerate() {
                let mut s = row.diag * xc[i];
                for &j in &row.neighbors[..row.count as usize] {
                    s += xc[j] * w;
                }
                yc[i] = s;
            }
        }
        Ok(y)
    }

    pub fn to_band(&self) -> BandMatrix {
        let n = self.dim();
        let bw = self.bandwidth();
        let w = C64::new(1.0 / (self.grid.h * self.grid.h), 0.0);
        let mut b = BandMatrix::zeros(n, bw, bw);
        for (i, row) in self.rows.iter().enumerate() {
            b.set(i, i, row.diag);
            for &j in &row.neighbors[..row.count as usize] {
                b.set(i, j, w);
            }
        }
        b
    }

    /// Factors on first use; later calls return the cached factors.
    pub fn factorization(&self) -> Result<Arc<BandLu>> {
        let cached = self.lu.get_or_init(|| {
            self.to_band().factor().map(Arc::new).map_err(|e| match e {
                Error::SingularOperator { index, magnitude } => (index, magnitude),
                _ => (usize::MAX, f64::NAN),
            })
        });
        match cached {
            Ok(lu) => Ok(Arc::clone(lu)),
            Err((index, magnitude)) => Err(Error::SingularOperator {
                index: *index,
                magnitude: *magnitude,
            }),
        }
    }

    fn count(&self, cols: usize) {
        if let Some(c) = &self.counter {
            c.add(cols as u64);
        }
    }

    /// `H⁻¹ · rhs`.
    pub fn solve(&self, rhs: &CMatrix) -> Result<CMatrix> {
        let lu = self.factorization()?;
        let x = lu.solve(rhs)?;
        self.count(rhs.ncols());
        Ok(x)
    }

    /// `H⁻ᴴ · rhs`, reusing the factors of `H`.
    pub fn solve_adjoint(&self, rhs: &CMatrix) -> Result<CMatrix> {
        let lu = self.factorization()?;
        let x = lu.solve_adjoint(rhs)?;
        self.count(rhs.ncols());
        Ok(x)
    }
}

/// Free-function form of [`HelmholtzOperator::solve`].
pub fn solve(h: &HelmholtzOperator, rhs: &CMatrix) -> Result<CMatrix> {
    h.solve(rhs)
}

/// Free-function form of [`HelmholtzOperator::solve_adjoint`].
pub fn solve_adjoint(h: &HelmholtzOperator, rhs: &CMatrix) -> Result<CMatrix> {
    h.solve_adjoint(rhs)
}
