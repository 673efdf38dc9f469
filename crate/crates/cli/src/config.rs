//! Experiment configuration: a flat `key = value` file plus flag overrides.
//!
//! The file is UTF-8, `#` starts a comment, keys are case-sensitive and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use lrfwi_core::acquisition::MaskPattern;
use lrfwi_core::joint::BudgetRule;
use lrfwi_core::probes::ProbeDistribution;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Random(MaskPattern),
    /// Random entries, except that every midpoint-offset row and column
    /// keeps enough samples to pin down a low-rank fit.
    Completable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipelineChoice {
    Full,
    Disjoint,
    Joint,
    /// Disjoint and joint on the same data.
    Both,
    /// Full, disjoint and joint.
    All,
}

impl PipelineChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "disjoint" => Ok(Self::Disjoint),
            "joint" => Ok(Self::Joint),
            "both" => Ok(Self::Both),
            "all" => Ok(Self::All),
            _ => Err(CliError::BadSpec(format!("unknown pipeline `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub nz: usize,
    pub nx: usize,
    pub h: f64,
    /// `layered:N`, `lens`, `lens:<contrast m/s>` or `file:<path>`.
    pub model: String,
    /// Co-located stations on one row.
    pub stations: usize,
    pub station_depth: usize,
    /// Receivers sit this many rows below the sources.
    pub receiver_offset: usize,
    /// Frequencies in Hz, ascending.
    pub frequencies: Vec<f64>,
    /// Frequencies per band; consecutive bands share `band_overlap` of them.
    pub band_size: usize,
    pub band_overlap: usize,
    pub ricker_peak: f64,
    pub source_scale: f64,
    pub keep: f64,
    pub mask_pattern: MaskKind,
    pub probes: usize,
    pub distribution: ProbeDistribution,
    pub rank: usize,
    pub lambda: f64,
    /// Residual budget per slice is `(eps_rel · ‖observed‖)²`.
    pub eps_rel: f64,
    pub budget_rule: BudgetRule,
    /// Outer iterations per band.
    pub outer_iters: usize,
    /// L-BFGS iterations per model update.
    pub lbfgs_iters: usize,
    pub lbfgs_memory: usize,
    pub max_rel_step: f64,
    pub root_iters: usize,
    pub spg_iters: usize,
    pub seed: u64,
    pub pipeline: PipelineChoice,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nz: 60,
            nx: 120,
            h: 20.0,
            model: "lens".into(),
            stations: 40,
            station_depth: 2,
            receiver_offset: 2,
            frequencies: vec![3.0, 5.0, 7.0, 10.0],
            band_size: 2,
            band_overlap: 0,
            ricker_peak: 6.0,
            source_scale: 1e3,
            keep: 0.5,
            mask_pattern: MaskKind::Completable,
            probes: 4,
            distribution: ProbeDistribution::Gaussian,
            rank: 5,
            lambda: 1e-3,
            eps_rel: 1e-2,
            budget_rule: BudgetRule::DataRadius,
            outer_iters: 10,
            lbfgs_iters: 5,
            lbfgs_memory: 5,
            max_rel_step: 0.05,
            root_iters: 10,
            spg_iters: 200,
            seed: 0,
            pipeline: PipelineChoice::Both,
            out: PathBuf::from("out"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| CliError::BadSpec(format!("`{key}`: cannot parse `{v}`")))
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "nz" => self.nz = num(key, v)?,
            "nx" => self.nx = num(key, v)?,
            "h" => self.h = num(key, v)?,
            "model" => self.model = v.to_string(),
            "stations" => self.stations = num(key, v)?,
            "station_depth" => self.station_depth = num(key, v)?,
            "receiver_offset" => self.receiver_offset = num(key, v)?,
            "frequencies" => {
                self.frequencies = v.split(',').map(|f| num(key, f.trim())).collect::<Result<_>>()?;
            }
            "band_size" => self.band_size = num(key, v)?,
            "band_overlap" => self.band_overlap = num(key, v)?,
            "ricker_peak" => self.ricker_peak = num(key, v)?,
            "source_scale" => self.source_scale = num(key, v)?,
            "keep" => self.keep = num(key, v)?,
            "mask_pattern" => {
                self.mask_pattern = match v {
                    "entries" => MaskKind::Random(MaskPattern::Entries),
                    "sources" => MaskKind::Random(MaskPattern::Sources),
                    "completable" => MaskKind::Completable,
                    _ => return Err(CliError::BadSpec(format!("unknown mask pattern `{v}`"))),
                }
            }
            "probes" => self.probes = num(key, v)?,
            "distribution" => {
                self.distribution = match v {
                    "gaussian" => ProbeDistribution::Gaussian,
                    "rademacher" => ProbeDistribution::Rademacher,
                    _ => return Err(CliError::BadSpec(format!("unknown probe distribution `{v}`"))),
                }
            }
            "rank" => self.rank = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "eps_rel" => self.eps_rel = num(key, v)?,
            "budget_rule" => {
                self.budget_rule = match v {
                    "residual" => BudgetRule::Residual,
                    "data_radius" => BudgetRule::DataRadius,
                    _ => return Err(CliError::BadSpec(format!("unknown budget rule `{v}`"))),
                }
            }
            "outer_iters" => self.outer_iters = num(key, v)?,
            "lbfgs_iters" => self.lbfgs_iters = num(key, v)?,
            "lbfgs_memory" => self.lbfgs_memory = num(key, v)?,
            "max_rel_step" => self.max_rel_step = num(key, v)?,
            "root_iters" => self.root_iters = num(key, v)?,
            "spg_iters" => self.spg_iters = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "pipeline" => self.pipeline = PipelineChoice::parse(v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(CliError::BadSpec(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::BadSpec(format!("line {}: expected key = value", n + 1)));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::BadSpec(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::BadSpec(m));
        if self.nz < 4 || self.nx < 4 || !(self.h > 0.0) {
            return bad(format!("grid {}x{} at h={} is too small", self.nz, self.nx, self.h));
        }
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return bad(format!("keep ratio {} outside (0, 1]", self.keep));
        }
        if self.frequencies.is_empty() || self.frequencies.iter().any(|f| !(*f > 0.0)) {
            return bad("frequencies must be positive".into());
        }
        if self.frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return bad("frequencies must be strictly ascending".into());
        }
        if self.band_size == 0 || self.band_overlap >= self.band_size {
            return bad("band_size must exceed band_overlap".into());
        }
        if self.probes == 0 || self.rank == 0 || self.stations == 0 {
            return bad("probes, rank and stations must be positive".into());
        }
        if !(self.lambda >= 0.0) || !(self.eps_rel >= 0.0) {
            return bad("lambda and eps_rel must be nonnegative".into());
        }
        if let Some(path) = self.model.strip_prefix("file:") {
            if !Path::new(path).exists() {
                return bad(format!("model file {path} not found"));
            }
        }
        Ok(())
    }

    /// Band schedule as index lists into `frequencies`.
    pub fn bands(&self) -> Vec<Vec<usize>> {
        let n = self.frequencies.len();
        let stride = self.band_size - self.band_overlap;
        let mut out = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + self.band_size).min(n);
            out.push((start..end).collect());
            if end == n {
                break;
            }
            start += stride;
        }
        out
    }
}
