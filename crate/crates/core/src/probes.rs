//! Random probe blocks (simultaneous-shot weights) and randomized misfit
//! estimation via `E‖Bw‖² = ‖B‖²_F` for `E[wwᵀ] = I`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{BoolMatrix, CMatrix, RMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProbeDistribution {
    #[default]
    Gaussian,
    Rademacher,
}

/// `Ns × K` real probe matrix. Columns are i.i.d. with zero mean and identity
/// covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBlock {
    pub w: RMatrix,
    pub distribution: ProbeDistribution,
    pub seed: u64,
}

impl ProbeBlock {
    pub fn ns(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn complex(&self) -> CMatrix {
        self.w.map(|x| C64::new(x, 0.0))
    }
}

/// Draws a probe block from a ChaCha8 stream seeded with `seed`, filling
/// column by column.
pub fn draw_probes(ns: usize, k: usize, dist: ProbeDistribution, seed: u64) -> Result<ProbeBlock> {
    if k == 0 {
        return Err(Error::InvalidArgument("probe count K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = RMatrix::zeros(ns, k);
    for c in 0..k {
        for r in 0..ns {
            w[(r, c)] = match dist {
                ProbeDistribution::Gaussian => rng.sample(StandardNormal),
                ProbeDistribution::Rademacher => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
        }
    }
    Ok(ProbeBlock {
        w,
        distribution: dist,
        seed,
    })
}

fn check_cols(b: &CMatrix, w: &ProbeBlock) -> Result<()> {
    if b.ncols() != w.ns() {
        return Err(Error::ShapeMismatch {
            expected: (b.nrows(), w.ns()),
            found: b.shape(),
        });
    }
    Ok(())
}

/// `(1/K) Σ_j ‖B w_j‖²`, an unbiased estimate of `‖B‖²_F`.
pub fn randomized_misfit(b: &CMatrix, w: &ProbeBlock) -> Result<f64> {
    check_cols(b, w)?;
    let bw = b * w.complex();
    Ok(bw.norm_squared() / w.k() as f64)
}

/// Contrasts the two orders of masking and probing.
///
/// `lhs` is the masked probe misfit `(1/K) Σ_j ‖(M ⊙ B) w_j‖²`, which needs
/// every column of `B` before the probes can be applied. `rhs` applies the
/// mask after probing, the only order that keeps the simultaneous-source
/// saving: each row of `B w_j` is weighted by the fraction of its entries
/// that were observed. The two agree when `M` is all ones and differ in
/// general otherwise.
pub fn masked_misfit_counterexample(b: &CMatrix, m: &BoolMatrix, w: &ProbeBlock) -> Result<(f64, f64)> {
    check_cols(b, w)?;
    if m.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: b.shape(),
            found: m.shape(),
        });
    }
    let wc = w.complex();
    let masked = b.zip_map(m, |z, keep| if keep { z } else { C64::new(0.0, 0.0) });
    let lhs = (&masked * &wc).norm_squared() / w.k() as f64;

    let bw = b * &wc;
    let cols = b.ncols().max(1) as f64;
    let rhs = (0..b.nrows())
        .map(|r| {
            let frac = m.row(r).iter().filter(|&&x| x).count() as f64 / cols;
            frac * bw.row(r).norm_squared()
        })
        .sum::<f64>()
        / w.k() as f64;
    Ok((lhs, rhs))
}
