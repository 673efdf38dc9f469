//! Survey geometry, the sampling operators P (receiver gather) and Q (source
//! scatter), the Ricker source spectrum, synthetic data and masks.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::helmholtz::{Boundary, HelmholtzOperator, PdeCounter};
use crate::model::{AcquisitionMask, BoolMatrix, CMatrix, FrequencySlice, ModelGrid, RMatrix, C64};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Survey {
    pub src_idx: Vec<usize>,
    pub rcv_idx: Vec<usize>,
    pub colocated: bool,
}

impl Survey {
    pub fn new(g: &ModelGrid, src_idx: Vec<usize>, rcv_idx: Vec<usize>) -> Result<Self> {
        let n = g.len();
        if let Some(&bad) = src_idx.iter().chain(&rcv_idx).find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("grid index {bad} out of range 0..{n}")));
        }
        if src_idx.is_empty() || rcv_idx.is_empty() {
            return Err(Error::InvalidArgument("survey needs at least one source and receiver".into()));
        }
        let mut sorted = rcv_idx.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate receiver index".into()));
        }
        let colocated = src_idx == rcv_idx;
        Ok(Self {
            src_idx,
            rcv_idx,
            colocated,
        })
    }

    /// `count` co-located sources and receivers spread evenly across the
    /// interior columns of depth row `iz` (1 keeps them off the boundary row).
    pub fn colocated_line(g: &ModelGrid, count: usize, iz: usize) -> Result<Self> {
        if count == 0 || count > g.nx - 2 {
            return Err(Error::InvalidArgument(format!(
                "cannot place {count} stations on {} interior columns",
                g.nx - 2
            )));
        }
        if iz == 0 || iz + 1 >= g.nz {
            return Err(Error::InvalidArgument(format!("station row {iz} is on the boundary")));
        }
        let span = (g.nx - 3) as f64;
        let idx: Vec<usize> = (0..count)
            .map(|j| {
                let ix = if count == 1 {
                    g.nx / 2
                } else {
                    1 + (j as f64 * span / (count - 1) as f64).round() as usize
                };
                g.index(iz, ix)
            })
            .collect();
        Self::new(g, idx.clone(), idx)
    }

    pub fn ns(&self) -> usize {
        self.src_idx.len()
    }

    pub fn nr(&self) -> usize {
        self.rcv_idx.len()
    }

    /// `Q·W`: scatters source weights (`Ns × K`) as `amp/h²`-scaled deltas.
    pub fn scatter_sources(&self, g: &ModelGrid, weights: &CMatrix, amp: f64) -> Result<CMatrix> {
        if weights.nrows() != self.ns() {
            return Err(Error::ShapeMismatch {
                expected: (self.ns(), weights.ncols()),
                found: weights.shape(),
            });
        }
        let scale = amp / (g.h * g.h);
        let mut q = CMatrix::zeros(g.len(), weights.ncols());
        for c in 0..weights.ncols() {
            for (s, &idx) in self.src_idx.iter().enumerate() {
                q[(idx, c)] += weights[(s, c)] * scale;
            }
        }
        Ok(q)
    }

    /// `Q·W` for real weights.
    pub fn scatter_sources_real(&self, g: &ModelGrid, weights: &RMatrix, amp: f64) -> Result<CMatrix> {
        self.scatter_sources(g, &weights.map(|x| C64::new(x, 0.0)), amp)
    }

    /// `P·U`: samples fields at the receivers.
    pub fn gather(&self, u: &CMatrix) -> CMatrix {
        CMatrix::from_fn(self.nr(), u.ncols(), |r, c| u[(self.rcv_idx[r], c)])
    }

    /// `Pᵀ·R`: injects receiver-side values back onto the grid.
    pub fn scatter_receivers(&self, n: usize, r: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(n, r.ncols());
        for c in 0..r.ncols() {
            for (k, &idx) in self.rcv_idx.iter().enumerate() {
                out[(idx, c)] += r[(k, c)];
            }
        }
        out
    }

    /// CSV sidecar: `kind,position,grid_index`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "kind,position,grid_index")?;
        for (i, s) in self.src_idx.iter().enumerate() {
            writeln!(f, "source,{i},{s}")?;
        }
        for (i, r) in self.rcv_idx.iter().enumerate() {
            writeln!(f, "receiver,{i},{r}")?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RickerSource {
    pub f_peak: f64,
}

impl RickerSource {
    pub fn new(f_peak: f64) -> Result<Self> {
        if !(f_peak > 0.0 && f_peak.is_finite()) {
            return Err(Error::InvalidArgument(format!("peak frequency must be positive, got {f_peak}")));
        }
        Ok(Self { f_peak })
    }
}

/// Fourier magnitude of `r(t) = (1 − 2π²f_p²t²) exp(−π²f_p²t²)` at `f` Hz.
pub fn ricker_amplitude(w: RickerSource, f: f64) -> f64 {
    let fp = w.f_peak;
    2.0 / PI.sqrt() * (f * f / (fp * fp * fp)) * (-(f * f) / (fp * fp)).exp()
}

/// Source-receiver slice `D[s, r] = amp · (P H⁻¹ q_s)[r]` from an assembled
/// operator.
pub fn forward_data_with(op: &HelmholtzOperator, s: &Survey, amp: f64) -> Result<FrequencySlice> {
    let g = op.grid();
    let q = s.scatter_sources(g, &CMatrix::identity(s.ns(), s.ns()), amp)?;
    let u = op.solve(&q)?;
    let d = s.gather(&u).transpose();
    FrequencySlice::source_receiver(op.omega(), d)
}

pub fn forward_data(g: &ModelGrid, s: &Survey, omega: f64, amp: f64) -> Result<FrequencySlice> {
    let op = HelmholtzOperator::new(g, omega, Boundary::Absorbing)?;
    forward_data_with(&op, s, amp)
}

pub fn forward_data_counted(g: &ModelGrid, s: &Survey, omega: f64, amp: f64, counter: &PdeCounter) -> Result<FrequencySlice> {
    let op = HelmholtzOperator::new(g, omega, Boundary::Absorbing)?.with_counter(counter.clone());
    forward_data_with(&op, s, amp)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaskPattern {
    /// Uniformly random individual (source, receiver) entries.
    #[default]
    Entries,
    /// Whole shot gathers (rows) removed.
    Sources,
}

/// Random observation mask with exactly `round(keep_ratio · units)` kept
/// units, where a unit is an entry or a source row depending on `pattern`.
pub fn make_mask(ns: usize, nr: usize, keep_ratio: f64, seed: u64, pattern: MaskPattern) -> Result<BoolMatrix> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::BadRatio(keep_ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match pattern {
        MaskPattern::Entries => {
            let total = ns * nr;
            let keep = (keep_ratio * total as f64).round() as usize;
            let mut mask = BoolMatrix::from_element(ns, nr, false);
            for flat in rand::seq::index::sample(&mut rng, total, keep) {
                mask[(flat / nr, flat % nr)] = true;
            }
            Ok(mask)
        }
        MaskPattern::Sources => {
            let keep = ((keep_ratio * ns as f64).round() as usize).max(1);
            let mut mask = BoolMatrix::from_element(ns, nr, false);
            for s in rand::seq::index::sample(&mut rng, ns, keep) {
                mask.row_mut(s).fill(true);
            }
            Ok(mask)
        }
    }
}

/// `M ⊙ D`.
pub fn apply_mask(mask: &BoolMatrix, slice: &FrequencySlice) -> Result<AcquisitionMask> {
    if mask.shape() != slice.data.shape() {
        return Err(Error::ShapeMismatch {
            expected: mask.shape(),
            found: slice.data.shape(),
        });
    }
    let data = slice.data.zip_map(mask, |z, keep| if keep { z } else { C64::new(0.0, 0.0) });
    Ok(AcquisitionMask {
        mask: mask.clone(),
        observed: FrequencySlice::new(slice.omega, slice.domain, data)?,
    })
}

pub fn mask_to_real(mask: &BoolMatrix) -> RMatrix {
    mask.map(|b| if b { 1.0 } else { 0.0 })
}
