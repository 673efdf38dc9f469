//! Synthetic velocity models and the linear-gradient starting model.

use lrfwi_core::jfm;
use lrfwi_core::ModelGrid;

use crate::error::{CliError, Result};

pub const V_MIN: f64 = 1500.0;
pub const V_MAX: f64 = 4500.0;
/// Background of the lens model.
pub const LENS_LAYERS: usize = 4;
pub const LENS_CONTRAST: f64 = -400.0;
/// Velocity span of `layered:N` models, top to bottom.
pub const LAYER_SPAN: (f64, f64) = (1500.0, 3000.0);

fn layered_velocity(nz: usize, nx: usize, layers: usize) -> Vec<f64> {
    let step = if layers > 1 {
        (LAYER_SPAN.1 - LAYER_SPAN.0) / (layers - 1) as f64
    } else {
        0.0
    };
    let mut v = Vec::with_capacity(nz * nx);
    for _ in 0..nx {
        for iz in 0..nz {
            let layer = (iz * layers / nz).min(layers - 1);
            v.push(LAYER_SPAN.0 + step * layer as f64);
        }
    }
    v
}

/// Inside test of the lens ellipse, centred a little above mid-depth.
pub fn in_lens(nz: usize, nx: usize, iz: usize, ix: usize) -> bool {
    let dz = (iz as f64 - 0.45 * nz as f64) / (0.15 * nz as f64);
    let dx = (ix as f64 - 0.5 * nx as f64) / (0.12 * nx as f64);
    dz * dz + dx * dx <= 1.0
}

/// Deterministic synthetic truth from a model spec.
pub fn make_truth(spec: &str, nz: usize, nx: usize, h: f64) -> Result<ModelGrid> {
    let bad = |m: String| CliError::BadSpec(m);
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let v = match kind {
        "layered" => {
            let n: usize = arg.parse().map_err(|_| bad(format!("layer count `{arg}`")))?;
            if n == 0 || n > nz {
                return Err(bad(format!("{n} layers on {nz} rows")));
            }
            layered_velocity(nz, nx, n)
        }
        "lens" => {
            let contrast = if arg.is_empty() {
                LENS_CONTRAST
            } else {
                arg.parse().map_err(|_| bad(format!("lens contrast `{arg}`")))?
            };
            let mut v = layered_velocity(nz, nx, LENS_LAYERS);
            for ix in 0..nx {
                for iz in 0..nz {
                    if in_lens(nz, nx, iz, ix) {
                        v[ix * nz + iz] += contrast;
                    }
                }
            }
            v
        }
        "file" => {
            let m = jfm::load(arg)?.into_real()?;
            if m.shape() != (nx, nz) {
                return Err(bad(format!("model file is {:?}, grid needs {:?}", m.shape(), (nx, nz))));
            }
            return Ok(ModelGrid::new(nz, nx, h, jfm::model_vector(&m))?);
        }
        _ => return Err(bad(format!("unknown model `{spec}`"))),
    };
    if let Some(x) = v.iter().find(|x| !(V_MIN..=V_MAX).contains(*x)) {
        return Err(bad(format!("velocity {x} outside [{V_MIN}, {V_MAX}]")));
    }
    Ok(ModelGrid::from_velocity(nz, nx, h, &v)?)
}

/// Depth-linear velocity from the truth's top-row mean to its bottom-row
/// mean.
pub fn make_initial(truth: &ModelGrid) -> ModelGrid {
    let (nz, nx) = (truth.nz, truth.nx);
    let vel = truth.velocity();
    let row_mean = |iz: usize| (0..nx).map(|ix| vel[ix * nz + iz]).sum::<f64>() / nx as f64;
    let (top, bottom) = (row_mean(0), row_mean(nz - 1));
    let mut m = Vec::with_capacity(nz * nx);
    for _ in 0..nx {
        for iz in 0..nz {
            let t = if nz > 1 { iz as f64 / (nz - 1) as f64 } else { 0.0 };
            let v = top + (bottom - top) * t;
            m.push(1.0 / (v * v));
        }
    }
    truth.with_model(m).expect("positive velocities give a valid model")
}
