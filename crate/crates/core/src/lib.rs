//! Joint low-rank seismic data completion and simultaneous-shot
//! frequency-domain waveform inversion.

pub mod acquisition;
pub mod banded;
pub mod error;
pub mod helmholtz;
pub mod inversion;
pub mod jfm;
pub mod joint;
pub mod lowrank;
pub mod midoff;
pub mod model;
pub mod probes;

pub use error::{Error, Result};
pub use model::{
    frobenius_norm, validate_model, AcquisitionMask, BoolMatrix, CMatrix, Domain, Factorization, FrequencySlice, ModelGrid, RMatrix, C64,
};
