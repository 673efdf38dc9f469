//! Shared domain types: model grids, frequency slices, acquisition masks and
//! low-rank factor pairs.
//!
//! Models are stored as flat vectors in z-fastest order: the node at depth
//! index `iz` and lateral index `ix` lives at `ix * nz + iz`. Read as a matrix
//! this is row-major with `nx` rows of `nz` samples, which is also how models
//! are written to JFM1 files.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;
pub type BoolMatrix = DMatrix<bool>;

/// Squared-slowness model on a regular 2-D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrid {
    pub nz: usize,
    pub nx: usize,
    /// Grid spacing in meters.
    pub h: f64,
    /// Squared slowness (s²/m²), z-fastest.
    pub m: Vec<f64>,
}

impl ModelGrid {
    pub fn new(nz: usize, nx: usize, h: f64, m: Vec<f64>) -> Result<Self> {
        let grid = Self { nz, nx, h, m };
        validate_model(&grid)?;
        Ok(grid)
    }

    /// Builds a grid from velocities in m/s.
    pub fn from_velocity(nz: usize, nx: usize, h: f64, velocity: &[f64]) -> Result<Self> {
        let m = velocity.iter().map(|&v| 1.0 / (v * v)).collect();
        Self::new(nz, nx, h, m)
    }

    pub fn constant(nz: usize, nx: usize, h: f64, velocity: f64) -> Result<Self> {
        Self::from_velocity(nz, nx, h, &vec![velocity; nz * nx])
    }

    /// Same geometry, different model values.
    pub fn with_model(&self, m: Vec<f64>) -> Result<Self> {
        Self::new(self.nz, self.nx, self.h, m)
    }

    pub fn len(&self) -> usize {
        self.nz * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    #[inline]
    pub fn index(&self, iz: usize, ix: usize) -> usize {
        ix * self.nz + iz
    }

    pub fn velocity(&self) -> Vec<f64> {
        self.m.iter().map(|&s| 1.0 / s.sqrt()).collect()
    }

    /// True for nodes on the outermost ring of the grid.
    #[inline]
    pub fn is_boundary(&self, iz: usize, ix: usize) -> bool {
        iz == 0 || ix == 0 || iz + 1 == self.nz || ix + 1 == self.nx
    }
}

/// Checks every [`ModelGrid`] invariant.
pub fn validate_model(g: &ModelGrid) -> Result<()> {
    if g.nz < 3 || g.nx < 3 {
        return Err(Error::BadShape(format!("grid must be at least 3x3, got nz={} nx={}", g.nz, g.nx)));
    }
    if !(g.h > 0.0 && g.h.is_finite()) {
        return Err(Error::BadShape(format!("grid spacing must be positive, got {}", g.h)));
    }
    if g.m.len() != g.nz * g.nx {
        return Err(Error::BadShape(format!(
            "model has {} values, grid needs {}",
            g.m.len(),
            g.nz * g.nx
        )));
    }
    if let Some((index, &value)) = g.m.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::NonPositiveSlowness { index, value });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    SourceReceiver,
    /// Rotated coordinates; remembers the source-receiver dimensions so the
    /// adjoint map can be applied.
    MidpointOffset {
        ns: usize,
        nr: usize,
    },
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::SourceReceiver => "source-receiver",
            Domain::MidpointOffset { .. } => "midpoint-offset",
        }
    }
}

/// Monochromatic data matrix. In the source-receiver domain rows are sources
/// and columns are receivers.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencySlice {
    pub omega: f64,
    pub domain: Domain,
    pub data: CMatrix,
}

impl FrequencySlice {
    pub fn new(omega: f64, domain: Domain, data: CMatrix) -> Result<Self> {
        if let Domain::MidpointOffset { ns, nr } = domain {
            let n = ns + nr - 1;
            if data.shape() != (n, n) {
                return Err(Error::ShapeMismatch {
                    expected: (n, n),
                    found: data.shape(),
                });
            }
        }
        check_finite(&data)?;
        Ok(Self { omega, domain, data })
    }

    pub fn source_receiver(omega: f64, data: CMatrix) -> Result<Self> {
        Self::new(omega, Domain::SourceReceiver, data)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }
}

/// Observation indicator plus the zero-filled observed data.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionMask {
    pub mask: BoolMatrix,
    pub observed: FrequencySlice,
}

impl AcquisitionMask {
    pub fn ns(&self) -> usize {
        self.mask.nrows()
    }

    pub fn nr(&self) -> usize {
        self.mask.ncols()
    }

    pub fn keep_fraction(&self) -> f64 {
        let ones = self.mask.iter().filter(|&&b| b).count();
        ones as f64 / self.mask.len() as f64
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }
}

/// Rank-k factor pair with `L·R` approximating a midpoint-offset slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Factorization {
    pub l: CMatrix,
    pub r: CMatrix,
    /// Radius of the ball `½‖L‖² + ½‖R‖² ≤ tau` the pair was last projected on.
    pub tau: f64,
}

impl Factorization {
    pub fn new(l: CMatrix, r: CMatrix, tau: f64) -> Result<Self> {
        let k = l.ncols();
        if k == 0 || r.nrows() != k {
            return Err(Error::BadShape(format!(
                "factor ranks disagree: L is {:?}, R is {:?}",
                l.shape(),
                r.shape()
            )));
        }
        if k > l.nrows().min(r.ncols()) {
            return Err(Error::BadShape(format!("rank {} exceeds min({}, {})", k, l.nrows(), r.ncols())));
        }
        Ok(Self { l, r, tau })
    }

    pub fn zeros(rows: usize, cols: usize, k: usize) -> Self {
        Self {
            l: CMatrix::zeros(rows, k),
            r: CMatrix::zeros(k, cols),
            tau: 0.0,
        }
    }

    pub fn rank_cap(&self) -> usize {
        self.l.ncols()
    }

    /// `½‖L‖²_F + ½‖R‖²_F`.
    pub fn half_norm_sq(&self) -> f64 {
        0.5 * (self.l.norm_squared() + self.r.norm_squared())
    }

    pub fn product(&self) -> CMatrix {
        &self.l * &self.r
    }
}

pub fn check_finite(a: &CMatrix) -> Result<()> {
    for c in 0..a.ncols() {
        for r in 0..a.nrows() {
            let z = a[(r, c)];
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFiniteEntry { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// `‖A‖_F`, rejecting non-finite entries.
pub fn frobenius_norm(a: &CMatrix) -> Result<f64> {
    check_finite(a)?;
    Ok(a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
}

/// Real inner product `Re⟨a, b⟩ = Re tr(aᴴ b)` on complex matrices.
pub fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}
