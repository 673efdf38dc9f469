//! JFM1 binary matrix files.
//!
//! Layout (little-endian): the 8-byte magic `JFIFMAT1`, `u64` rows, `u64`
//! cols, a `u8` dtype (0 = f64, 1 = complex f64 stored as interleaved re,im),
//! then `rows * cols` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CMatrix, RMatrix, C64};

pub const MAGIC: &[u8; 8] = b"JFIFMAT1";
const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum JfmMatrix {
    Real(RMatrix),
    Complex(CMatrix),
}

impl JfmMatrix {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            JfmMatrix::Real(m) => m.shape(),
            JfmMatrix::Complex(m) => m.shape(),
        }
    }

    pub fn into_real(self) -> Result<RMatrix> {
        match self {
            JfmMatrix::Real(m) => Ok(m),
            JfmMatrix::Complex(_) => Err(Error::Format("expected real matrix, found complex".into())),
        }
    }

    pub fn into_complex(self) -> Result<CMatrix> {
        match self {
            JfmMatrix::Complex(m) => Ok(m),
            JfmMatrix::Real(m) => Ok(m.map(|x| C64::new(x, 0.0))),
        }
    }
}

fn write_header<W: Write>(w: &mut W, rows: usize, cols: usize, dtype: u8) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    w.write_all(&[dtype])?;
    Ok(())
}

pub fn write_real<W: Write>(w: &mut W, a: &RMatrix) -> Result<()> {
    write_header(w, a.nrows(), a.ncols(), DTYPE_REAL)?;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            w.write_all(&a[(r, c)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_complex<W: Write>(w: &mut W, a: &CMatrix) -> Result<()> {
    write_header(w, a.nrows(), a.ncols(), DTYPE_COMPLEX)?;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            let z = a[(r, c)];
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read<R: Read>(r: &mut R) -> Result<JfmMatrix> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    let n = rows.checked_mul(cols).ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    match dtype[0] {
        DTYPE_REAL => {
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                vals.push(read_f64(r)?);
            }
            Ok(JfmMatrix::Real(RMatrix::from_row_slice(rows, cols, &vals)))
        }
        DTYPE_COMPLEX => {
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                let re = read_f64(r)?;
                let im = read_f64(r)?;
                vals.push(C64::new(re, im));
            }
            Ok(JfmMatrix::Complex(CMatrix::from_row_slice(rows, cols, &vals)))
        }
        d => Err(Error::Format(format!("unknown dtype {d}"))),
    }
}

pub fn save_real(path: impl AsRef<Path>, a: &RMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_real(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn save_complex(path: impl AsRef<Path>, a: &CMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_complex(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<JfmMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    read(&mut r)
}

/// Model vector as the `nx × nz` row-major matrix it is stored as.
pub fn model_matrix(nz: usize, nx: usize, m: &[f64]) -> RMatrix {
    RMatrix::from_row_slice(nx, nz, m)
}

/// Inverse of [`model_matrix`]: flattens row-major back to z-fastest order.
pub fn model_vector(a: &RMatrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len());
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            v.push(a[(r, c)]);
        }
    }
    v
}
