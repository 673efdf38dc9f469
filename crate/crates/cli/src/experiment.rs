//! Synthetic experiment: truth, data, mask, pipelines and artifacts.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lrfwi_core::acquisition::{apply_mask, forward_data, make_mask, ricker_amplitude, RickerSource, Survey};
use lrfwi_core::inversion::SubproblemOptions;
use lrfwi_core::jfm;
use lrfwi_core::joint::{disjoint_invert, joint_invert, model_error, snr_db, InversionData, JointConfig, JointState, Pipeline, SliceData};
use lrfwi_core::lowrank::{completable_mask, RootOptions, SpgOptions};
use lrfwi_core::{BoolMatrix, CMatrix, ModelGrid};

use crate::config::{ExperimentConfig, MaskKind, PipelineChoice};
use crate::error::Result;
use crate::models::{make_initial, make_truth};

/// Truth, starting model and the observed data of one configuration.
#[derive(Clone, Debug)]
pub struct Problem {
    pub truth: ModelGrid,
    pub initial: ModelGrid,
    pub mask: BoolMatrix,
    /// Subsampled data.
    pub data: InversionData,
    /// The same data with nothing missing.
    pub full: InversionData,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    cfg.validate()?;
    let truth = make_truth(&cfg.model, cfg.nz, cfg.nx, cfg.h)?;
    let initial = make_initial(&truth);
    let survey = station_line(&truth, cfg)?;
    let (ns, nr) = (survey.ns(), survey.nr());
    let wavelet = RickerSource::new(cfg.ricker_peak)?;
    // one acquisition: the same traces are missing at every frequency
    let mask = if cfg.keep >= 1.0 {
        BoolMatrix::from_element(ns, nr, true)
    } else {
        match cfg.mask_pattern {
            MaskKind::Random(pattern) => make_mask(ns, nr, cfg.keep, cfg.seed, pattern)?,
            MaskKind::Completable => balanced_mask(ns, nr, cfg.keep, cfg.seed)?,
        }
    };
    let all = BoolMatrix::from_element(ns, nr, true);
    let mut slices = Vec::new();
    let mut complete = Vec::new();
    let mut truth_slices = Vec::new();
    for &f in &cfg.frequencies {
        let amp = cfg.source_scale * ricker_amplitude(wavelet, f);
        let d = forward_data(&truth, &survey, 2.0 * PI * f, amp)?;
        slices.push(SliceData {
            omega: d.omega,
            amp,
            observed: apply_mask(&mask, &d)?,
        });
        complete.push(SliceData {
            omega: d.omega,
            amp,
            observed: apply_mask(&all, &d)?,
        });
        truth_slices.push(d.data);
    }
    let data = InversionData {
        grid: truth.clone(),
        survey,
        slices,
        bands: cfg.bands(),
        truth: Some(truth.clone()),
        full: Some(truth_slices),
    };
    let full = InversionData {
        slices: complete,
        ..data.clone()
    };
    Ok(Problem {
        truth,
        initial,
        mask,
        data,
        full,
    })
}

/// Random entry mask that keeps every midpoint-offset row and column
/// identifiable for the highest rank quota (at most 2) the keep ratio allows.
pub fn balanced_mask(ns: usize, nr: usize, keep: f64, seed: u64) -> Result<BoolMatrix> {
    let mut last = None;
    for rank in (0..=2).rev() {
        match completable_mask(ns, nr, keep, rank, seed) {
            Ok(m) => return Ok(m),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt").into())
}

/// Sources on row `station_depth`, receivers at the same columns
/// `receiver_offset` rows deeper.
pub fn station_line(g: &ModelGrid, cfg: &ExperimentConfig) -> Result<Survey> {
    let line = Survey::colocated_line(g, cfg.stations, cfg.station_depth)?;
    if cfg.receiver_offset == 0 {
        return Ok(line);
    }
    let rcv = Survey::colocated_line(g, cfg.stations, cfg.station_depth + cfg.receiver_offset)?;
    Ok(Survey::new(g, line.src_idx, rcv.rcv_idx)?)
}

pub fn joint_config(cfg: &ExperimentConfig) -> JointConfig {
    JointConfig {
        k: cfg.probes,
        distribution: cfg.distribution,
        master_seed: cfg.seed,
        outer_iters: cfg.outer_iters,
        lambda: cfg.lambda,
        eps_rel: cfg.eps_rel,
        budget_rule: cfg.budget_rule,
        rank: cfg.rank,
        root: RootOptions {
            max_root_iter: cfg.root_iters,
            spg: SpgOptions {
                max_iter: cfg.spg_iters,
                ..SpgOptions::default()
            },
            ..RootOptions::default()
        },
        sub: SubproblemOptions {
            iter_cap: cfg.lbfgs_iters,
            memory: cfg.lbfgs_memory,
            max_rel_step: cfg.max_rel_step,
            ..SubproblemOptions::default()
        },
    }
}

pub fn pipelines(choice: PipelineChoice) -> Vec<Pipeline> {
    match choice {
        PipelineChoice::Full => vec![Pipeline::Full],
        PipelineChoice::Disjoint => vec![Pipeline::Disjoint],
        PipelineChoice::Joint => vec![Pipeline::Joint],
        PipelineChoice::Both => vec![Pipeline::Disjoint, Pipeline::Joint],
        PipelineChoice::All => vec![Pipeline::Full, Pipeline::Disjoint, Pipeline::Joint],
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub pipeline: Pipeline,
    pub state: JointState,
    pub model_error: f64,
    /// Final recovered-slice SNR per frequency (dB).
    pub snr: Vec<f64>,
}

pub fn run_pipeline(cfg: &ExperimentConfig, problem: &Problem, pipeline: Pipeline) -> Result<PipelineRun> {
    let jc = joint_config(cfg);
    let state = match pipeline {
        Pipeline::Full => disjoint_invert(&jc, &problem.full, &problem.initial)?,
        Pipeline::Disjoint => disjoint_invert(&jc, &problem.data, &problem.initial)?,
        Pipeline::Joint => joint_invert(&jc, &problem.data, &problem.initial)?,
    };
    let truth_slices = problem.data.full.as_ref().expect("problems carry complete data");
    let snr = state
        .completed
        .iter()
        .zip(truth_slices)
        .zip(&problem.data.slices)
        .map(|((c, t), s)| snr_db(t, c.as_ref().unwrap_or(&s.observed.observed.data)))
        .collect::<lrfwi_core::Result<_>>()?;
    Ok(PipelineRun {
        pipeline,
        model_error: model_error(&problem.truth, &state.m)?,
        state,
        snr,
    })
}

#[derive(Clone, Debug)]
pub struct Report {
    pub problem: Problem,
    pub runs: Vec<PipelineRun>,
}

impl Report {
    pub fn run(&self, p: Pipeline) -> Option<&PipelineRun> {
        self.runs.iter().find(|r| r.pipeline == p)
    }
}

/// Runs the configured pipelines without touching the filesystem.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<Report> {
    let problem = build_problem(cfg)?;
    let runs = pipelines(cfg.pipeline)
        .into_iter()
        .map(|p| run_pipeline(cfg, &problem, p))
        .collect::<Result<_>>()?;
    Ok(Report { problem, runs })
}

/// Runs the configured pipelines and writes every artifact under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let report = run_in_memory(cfg)?;
    write_artifacts(cfg, &report)?;
    Ok(report)
}

fn freq_tag(f: f64) -> String {
    format!("{f}hz")
}

fn model_files(dir: &Path, name: &str, g: &ModelGrid, range: (f64, f64)) -> Result<()> {
    jfm::save_real(dir.join(format!("{name}.jfm")), &jfm::model_matrix(g.nz, g.nx, &g.m))?;
    fs::write(dir.join(format!("{name}.pgm")), pgm(g, range))?;
    Ok(())
}

/// Plain-text greyscale velocity image, depth down, scaled to `range`.
pub fn pgm(g: &ModelGrid, range: (f64, f64)) -> String {
    let v = g.velocity();
    let span = (range.1 - range.0).max(f64::MIN_POSITIVE);
    let mut s = format!("P2\n{} {}\n255\n", g.nx, g.nz);
    for iz in 0..g.nz {
        let row: Vec<String> = (0..g.nx)
            .map(|ix| {
                let t = ((v[ix * g.nz + iz] - range.0) / span).clamp(0.0, 1.0);
                ((t * 255.0).round() as u8).to_string()
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.10e}")
    }
}

pub fn history_csv(cfg: &ExperimentConfig, runs: &[PipelineRun]) -> String {
    let mut s = String::from("pipeline,band,iter,seed,probe_seed,phi_initial,phi,model_error");
    for &f in &cfg.frequencies {
        let _ = write!(s, ",snr_{}", freq_tag(f));
    }
    s.push_str(",pde_count,pde_total,evaluations,lbfgs_status,completion_status\n");
    for run in runs {
        let mut total = 0;
        for r in &run.state.history {
            total += r.pde_solves;
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                run.pipeline.name(),
                r.band,
                r.iter,
                cfg.seed,
                r.probe_seed,
                num(r.phi_initial),
                num(r.phi),
                r.model_error.map(num).unwrap_or_default()
            );
            for snr in &r.snr {
                let _ = write!(s, ",{}", snr.map(num).unwrap_or_default());
            }
            let statuses: Vec<String> = r.completion.iter().map(|c| format!("{c:?}")).collect();
            let _ = writeln!(
                s,
                ",{},{},{},{:?},{}",
                r.pde_solves,
                total,
                r.evaluations,
                r.lbfgs,
                statuses.join(" ")
            );
        }
    }
    s
}

pub fn comparison_csv(cfg: &ExperimentConfig, runs: &[PipelineRun]) -> String {
    let mut s = String::from("pipeline,seed,keep,outer_iters,probes,final_model_error");
    for &f in &cfg.frequencies {
        let _ = write!(s, ",snr_{}", freq_tag(f));
    }
    s.push_str(",pde_total\n");
    for run in runs {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            run.pipeline.name(),
            cfg.seed,
            cfg.keep,
            cfg.outer_iters,
            cfg.probes,
            num(run.model_error)
        );
        for &snr in &run.snr {
            let _ = write!(s, ",{}", num(snr));
        }
        let _ = writeln!(s, ",{}", run.state.pde_solves);
    }
    s
}

pub fn write_artifacts(cfg: &ExperimentConfig, report: &Report) -> Result<()> {
    let dir = &cfg.out;
    fs::create_dir_all(dir)?;
    let p = &report.problem;
    let tv = p.truth.velocity();
    let range = tv
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    model_files(dir, "truth", &p.truth, range)?;
    model_files(dir, "initial", &p.initial, range)?;
    let truth_slices = p.data.full.as_ref().expect("problems carry complete data");
    for (i, (&f, s)) in cfg.frequencies.iter().zip(&p.data.slices).enumerate() {
        let tag = freq_tag(f);
        jfm::save_complex(dir.join(format!("slice_{tag}_true.jfm")), &truth_slices[i])?;
        jfm::save_complex(dir.join(format!("slice_{tag}_observed.jfm")), &s.observed.observed.data)?;
    }
    for run in &report.runs {
        let name = run.pipeline.name();
        model_files(dir, &format!("final_{name}"), &run.state.m, range)?;
        for (&f, c) in cfg.frequencies.iter().zip(&run.state.completed) {
            if let Some(c) = c {
                let path = dir.join(format!("slice_{}_recovered_{name}.jfm", freq_tag(f)));
                jfm::save_complex(path, c)?;
            }
        }
    }
    fs::write(dir.join("history.csv"), history_csv(cfg, &report.runs))?;
    fs::write(dir.join("comparison.csv"), comparison_csv(cfg, &report.runs))?;
    Ok(())
}

/// Recovered slice of `run` at frequency index `i`, falling back to the
/// observed data when the slice was never completed.
pub fn recovered<'a>(report: &'a Report, run: &'a PipelineRun, i: usize) -> &'a CMatrix {
    run.state.completed[i]
        .as_ref()
        .unwrap_or(&report.problem.data.slices[i].observed.observed.data)
}
