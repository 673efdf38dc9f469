//! Alternating block-coordinate descent between per-frequency low-rank
//! completion and simultaneous-shot model updates, plus the stage-wise
//! baseline (complete first, then invert).
//!
//! One joint outer iteration, per frequency band:
//!
//! 1. draw fresh probes `W^k`;
//! 2. simulate `FW = P H(m^k)⁻¹ a Q W^k` (`K` solves per frequency);
//! 3. complete every slice of the band with the `λ`-weighted shot term;
//! 4. take a partial L-BFGS step on `m` against `T*(L R)ᵀ W^k`, reusing the
//!    fields of step 2 for the first gradient.

use rayon::prelude::*;

use crate::acquisition::Survey;
use crate::error::{Error, Result};
use crate::helmholtz::PdeCounter;
use crate::inversion::{simulate, solve_m_subproblem, FrequencyTerm, LbfgsStatus, MisfitOracle, ShotMisfitSpec, SubproblemOptions};
use crate::lowrank::{complete, init_factors, solve_lasso, CompletionProblem, CompletionStatus, RootOptions, ShotTerm, SpgOptions};
use crate::midoff::to_midoff;
use crate::model::{AcquisitionMask, CMatrix, Factorization, ModelGrid};
use crate::probes::{draw_probes, ProbeBlock, ProbeDistribution};

/// Observed data of one frequency.
#[derive(Clone, Debug)]
pub struct SliceData {
    pub omega: f64,
    /// Source amplitude used for this frequency's simulations.
    pub amp: f64,
    pub observed: AcquisitionMask,
}

/// Everything the pipelines invert. `bands` lists indices into `slices`,
/// lowest band first.
#[derive(Clone, Debug)]
pub struct InversionData {
    pub grid: ModelGrid,
    pub survey: Survey,
    pub slices: Vec<SliceData>,
    pub bands: Vec<Vec<usize>>,
    /// Known model, for the model-error metric only.
    pub truth: Option<ModelGrid>,
    /// Complete data per slice, for recovered-slice SNR only.
    pub full: Option<Vec<CMatrix>>,
}

impl InversionData {
    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() || self.bands.iter().any(|b| b.is_empty()) {
            return Err(Error::EmptySchedule);
        }
        let (ns, nr) = (self.survey.ns(), self.survey.nr());
        for s in &self.slices {
            if s.observed.mask.shape() != (ns, nr) {
                return Err(Error::ShapeMismatch {
                    expected: (ns, nr),
                    found: s.observed.mask.shape(),
                });
            }
        }
        if let Some(&bad) = self.bands.iter().flatten().find(|&&i| i >= self.slices.len()) {
            return Err(Error::InvalidArgument(format!("band refers to missing slice {bad}")));
        }
        if let Some(full) = &self.full {
            if full.len() != self.slices.len() {
                return Err(Error::InvalidArgument("one complete slice per frequency expected".into()));
            }
        }
        check_band_order(&self.band_omegas())
    }

    pub fn band_omegas(&self) -> Vec<Vec<f64>> {
        self.bands
            .iter()
            .map(|b| b.iter().map(|&i| self.slices[i].omega).collect())
            .collect()
    }
}

/// How the joint completion step bounds the factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetRule {
    /// Pareto root `v(τ) = ε` on the joint residual.
    Residual,
    /// Lasso on the nuclear radius of the data-only completion.
    DataRadius,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointConfig {
    /// Probes per outer iteration.
    pub k: usize,
    pub distribution: ProbeDistribution,
    pub master_seed: u64,
    /// Outer iterations per band.
    pub outer_iters: usize,
    pub lambda: f64,
    /// Residual budget `ε = (eps_rel · ‖D_s‖_F)²` per slice.
    pub eps_rel: f64,
    pub budget_rule: BudgetRule,
    pub rank: usize,
    pub root: RootOptions,
    pub sub: SubproblemOptions,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            k: 4,
            distribution: ProbeDistribution::Gaussian,
            master_seed: 0,
            outer_iters: 10,
            lambda: 1e-3,
            eps_rel: 1e-2,
            budget_rule: BudgetRule::DataRadius,
            rank: 5,
            root: RootOptions::default(),
            sub: SubproblemOptions::default(),
        }
    }
}

/// Probe seed for outer iteration `k` of band `band` (SplitMix64 of the
/// packed triple), so every iteration draws a different block.
pub fn probe_seed(master: u64, band: usize, k: usize) -> u64 {
    let mut z = master ^ ((band as u64) << 40) ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// PDE solves of one joint outer iteration: `K` forward solves per frequency
/// for `FW`, which double as the forward solves of the first misfit
/// evaluation, then `K` adjoint solves for that evaluation and `2K` for each
/// further one.
pub fn joint_pde_count(freqs: usize, k: usize, evaluations: usize) -> u64 {
    let per = if evaluations == 0 { k } else { 2 * k * evaluations };
    (freqs * per) as u64
}

/// PDE solves of one stage-wise outer iteration (`2K` per evaluation).
pub fn disjoint_pde_count(freqs: usize, k: usize, evaluations: usize) -> u64 {
    (freqs * 2 * k * evaluations) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    /// Stage-wise inversion of the complete data.
    Full,
    Disjoint,
    Joint,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Full => "full",
            Pipeline::Disjoint => "disjoint",
            Pipeline::Joint => "joint",
        }
    }
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub band: usize,
    /// Outer iteration within the band (1-based).
    pub iter: usize,
    pub probe_seed: u64,
    pub phi_initial: f64,
    pub phi: f64,
    pub model_error: Option<f64>,
    /// Recovered-slice SNR (dB) for every slice, `None` without complete data.
    pub snr: Vec<Option<f64>>,
    /// Completion residuals of the band's slices before and after the update
    /// (joint only; both at the current model).
    pub residual_before: Vec<f64>,
    pub residual_after: Vec<f64>,
    pub budgets: Vec<f64>,
    pub completion: Vec<CompletionStatus>,
    pub eps_relaxed: Vec<bool>,
    pub lbfgs: LbfgsStatus,
    pub evaluations: usize,
    /// Solves counted during this iteration.
    pub pde_solves: u64,
}

#[derive(Clone, Debug)]
pub struct JointState {
    /// Outer iterations completed over all bands.
    pub k: usize,
    pub m: ModelGrid,
    /// Per-slice factors (`None` until the slice is first completed).
    pub factors: Vec<Option<Factorization>>,
    /// Completed source-receiver slices (`None` until first completed).
    pub completed: Vec<Option<CMatrix>>,
    pub probes: Option<ProbeBlock>,
    pub history: Vec<IterationRecord>,
    pub pde_solves: u64,
}

impl JointState {
    fn new(m0: &ModelGrid, slices: usize) -> Self {
        Self {
            k: 0,
            m: m0.clone(),
            factors: vec![None; slices],
            completed: vec![None; slices],
            probes: None,
            history: Vec::new(),
            pde_solves: 0,
        }
    }
}

/// `−20 log10(‖estimate − truth‖ / ‖truth‖)`, capped at 300 dB.
pub fn snr_db(truth: &CMatrix, estimate: &CMatrix) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.shape(),
            found: estimate.shape(),
        });
    }
    let t = truth.norm();
    if t == 0.0 {
        return Err(Error::ZeroReference);
    }
    let e = (estimate - truth).norm();
    if e == 0.0 {
        return Ok(300.0);
    }
    Ok((-20.0 * (e / t).log10()).min(300.0))
}

/// `‖estimate − truth‖ / ‖truth‖` on squared slowness.
pub fn model_error(truth: &ModelGrid, estimate: &ModelGrid) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::ShapeMismatch {
            expected: (truth.nz, truth.nx),
            found: (estimate.nz, estimate.nx),
        });
    }
    let num: f64 = truth.m.iter().zip(&estimate.m).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.m.iter().map(|a| a * a).sum();
    Ok((num / den).sqrt())
}

fn check_band_order(bands: &[Vec<f64>]) -> Result<()> {
    if bands.is_empty() || bands.iter().any(|b| b.is_empty()) {
        return Err(Error::EmptySchedule);
    }
    let lows: Vec<f64> = bands.iter().map(|b| b.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    if lows.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("frequency bands must run from low to high".into()));
    }
    Ok(())
}

/// Runs `runner` band by band, warm-starting each band from the model the
/// previous one returned.
pub fn frequency_continuation<F>(bands: &[Vec<f64>], m0: ModelGrid, mut runner: F) -> Result<ModelGrid>
where
    F: FnMut(usize, &[f64], ModelGrid) -> Result<ModelGrid>,
{
    check_band_order(bands)?;
    let mut m = m0;
    for (i, band) in bands.iter().enumerate() {
        m = runner(i, band, m)?;
    }
    Ok(m)
}

fn budget(cfg: &JointConfig, s: &SliceData) -> f64 {
    (cfg.eps_rel * s.observed.observed.data.norm()).powi(2)
}

fn snr_row(data: &InversionData, completed: &[Option<CMatrix>]) -> Vec<Option<f64>> {
    completed
        .iter()
        .enumerate()
        .map(|(i, c)| match (c, &data.full) {
            (Some(c), Some(full)) => snr_db(&full[i], c).ok(),
            _ => None,
        })
        .collect()
}

fn start_factors(s: &SliceData, rank: usize) -> Result<Factorization> {
    init_factors(&to_midoff(&s.observed.observed)?, rank)
}

/// Completed slice and its factors from one completion solve, with `ε`
/// relaxed by 2× once when the budget is out of reach.
struct SliceUpdate {
    factors: Factorization,
    completed: CMatrix,
    before: f64,
    after: f64,
    eps: f64,
    status: CompletionStatus,
    relaxed: bool,
}

fn complete_slice(problem: CompletionProblem, start: &Factorization, root: &RootOptions) -> Result<SliceUpdate> {
    let before = crate::lowrank::residual(&problem, start)?;
    let mut out = complete(&problem, start, root)?;
    let mut problem = problem;
    let mut relaxed = false;
    if out.status == CompletionStatus::BudgetTooTight {
        problem = problem.clone().with_epsilon(2.0 * problem.epsilon());
        out = complete(&problem, &out.factors, root)?;
        relaxed = true;
    }
    let completed = problem.completed(&out.factors)?.data;
    Ok(SliceUpdate {
        before,
        after: out.residual,
        eps: problem.epsilon(),
        status: out.status,
        relaxed,
        completed,
        factors: out.factors,
    })
}

/// Joint step on the data-only radius `start.tau`.
fn lasso_slice(problem: CompletionProblem, start: &Factorization, spg: &SpgOptions) -> Result<SliceUpdate> {
    let before = crate::lowrank::residual(&problem, start)?;
    let out = solve_lasso(&problem, start.tau, start, spg)?;
    let completed = problem.completed(&out.factors)?.data;
    Ok(SliceUpdate {
        before,
        after: out.v_tau,
        eps: problem.epsilon(),
        status: CompletionStatus::Exhausted,
        relaxed: false,
        completed,
        factors: out.factors,
    })
}

fn metrics(data: &InversionData, m: &ModelGrid) -> Option<f64> {
    data.truth.as_ref().and_then(|t| model_error(t, m).ok())
}

fn band_spec(data: &InversionData, band: &[usize], probes: &ProbeBlock, targets: Vec<CMatrix>) -> Result<ShotMisfitSpec> {
    let terms = band
        .iter()
        .zip(targets)
        .map(|(&i, target)| FrequencyTerm {
            omega: data.slices[i].omega,
            amp: data.slices[i].amp,
            target,
        })
        .collect();
    ShotMisfitSpec::new(data.grid.clone(), data.survey.clone(), probes.clone(), terms)
}

/// Joint completion and inversion from `m0`, band by band.
pub fn joint_invert(cfg: &JointConfig, data: &InversionData, m0: &ModelGrid) -> Result<JointState> {
    data.validate()?;
    let mut state = JointState::new(m0, data.slices.len());
    if cfg.outer_iters == 0 {
        return Ok(state);
    }
    let counter = PdeCounter::new();
    let (ns, nr) = (data.survey.ns(), data.survey.nr());
    let bands = data.band_omegas();
    let m_final = frequency_continuation(&bands, m0.clone(), |b, _, m_band| {
        let band = &data.bands[b];
        let mut m = m_band;
        for it in 1..=cfg.outer_iters {
            let before_count = counter.get();
            let seed = probe_seed(cfg.master_seed, b, it);
            let probes = draw_probes(ns, cfg.k, cfg.distribution, seed)?;
            let wc = probes.complex();

            // FW at the current model; the fields are reused below
            let zero_targets = vec![CMatrix::zeros(nr, cfg.k); band.len()];
            let spec0 = band_spec(data, band, &probes, zero_targets)?;
            let fields = simulate(&spec0, &m.m, Some(&counter))?;
            let fw = fields.simultaneous_data(&data.survey);

            for &i in band {
                if state.factors[i].is_none() {
                    let s = &data.slices[i];
                    let start = start_factors(s, cfg.rank)?;
                    state.factors[i] = Some(match cfg.budget_rule {
                        BudgetRule::Residual => start,
                        BudgetRule::DataRadius => {
                            let p = CompletionProblem::new(s.observed.clone(), cfg.rank, budget(cfg, s))?;
                            complete(&p, &start, &cfg.root)?.factors
                        }
                    });
                }
            }
            let updates: Vec<SliceUpdate> = band
                .par_iter()
                .zip(fw.into_par_iter())
                .map(|(&i, fw)| {
                    let s = &data.slices[i];
                    let start = state.factors[i].as_ref().expect("factors set above");
                    let problem = CompletionProblem::new(s.observed.clone(), cfg.rank, budget(cfg, s))?.with_shot_term(
                        cfg.lambda,
                        ShotTerm {
                            fw,
                            probes: probes.clone(),
                        },
                    )?;
                    match cfg.budget_rule {
                        BudgetRule::Residual => complete_slice(problem, start, &cfg.root),
                        BudgetRule::DataRadius => lasso_slice(problem, start, &cfg.root.spg),
                    }
                })
                .collect::<Result<_>>()?;

            let targets: Vec<CMatrix> = updates.iter().map(|u| u.completed.transpose() * &wc).collect();
            let spec = band_spec(data, band, &probes, targets)?;
            let oracle = MisfitOracle::new(&spec).with_counter(counter.clone());
            oracle.prime(fields);
            let sub = solve_m_subproblem(&oracle, &m.m, &cfg.sub)?;
            m = m.with_model(sub.m)?;

            let mut record = IterationRecord {
                band: b,
                iter: it,
                probe_seed: seed,
                phi_initial: sub.phi_initial,
                phi: sub.phi,
                model_error: None,
                snr: Vec::new(),
                residual_before: updates.iter().map(|u| u.before).collect(),
                residual_after: updates.iter().map(|u| u.after).collect(),
                budgets: updates.iter().map(|u| u.eps).collect(),
                completion: updates.iter().map(|u| u.status).collect(),
                eps_relaxed: updates.iter().map(|u| u.relaxed).collect(),
                lbfgs: sub.status,
                evaluations: sub.evaluations,
                pde_solves: 0,
            };
            for (&i, u) in band.iter().zip(updates) {
                state.factors[i] = Some(u.factors);
                state.completed[i] = Some(u.completed);
            }
            record.model_error = metrics(data, &m);
            record.snr = snr_row(data, &state.completed);
            record.pde_solves = counter.get() - before_count;
            state.history.push(record);
            state.probes = Some(probes);
            state.k += 1;
        }
        Ok(m)
    })?;
    state.m = m_final;
    state.pde_solves = counter.get();
    Ok(state)
}

/// Stage-wise baseline: complete every slice without the shot term, then
/// invert the completed data with the same probe schedule as the joint run.
/// A complete mask skips stage one.
pub fn disjoint_invert(cfg: &JointConfig, data: &InversionData, m0: &ModelGrid) -> Result<JointState> {
    data.validate()?;
    let mut state = JointState::new(m0, data.slices.len());
    let stage1: Vec<(Option<Factorization>, CMatrix, CompletionStatus)> = data
        .slices
        .par_iter()
        .map(|s| {
            if s.observed.is_complete() {
                return Ok((None, s.observed.observed.data.clone(), CompletionStatus::ZeroFeasible));
            }
            let problem = CompletionProblem::new(s.observed.clone(), cfg.rank, budget(cfg, s))?;
            let u = complete_slice(problem, &start_factors(s, cfg.rank)?, &cfg.root)?;
            Ok((Some(u.factors), u.completed, u.status))
        })
        .collect::<Result<_>>()?;
    let statuses: Vec<CompletionStatus> = stage1.iter().map(|s| s.2).collect();
    for (i, (f, c, _)) in stage1.into_iter().enumerate() {
        state.factors[i] = f;
        state.completed[i] = Some(c);
    }
    if cfg.outer_iters == 0 {
        return Ok(state);
    }
    let counter = PdeCounter::new();
    let ns = data.survey.ns();
    let bands = data.band_omegas();
    let completed = state.completed.clone();
    let snr = snr_row(data, &completed);
    let m_final = frequency_continuation(&bands, m0.clone(), |b, _, m_band| {
        let band = &data.bands[b];
        let mut m = m_band;
        for it in 1..=cfg.outer_iters {
            let before_count = counter.get();
            let seed = probe_seed(cfg.master_seed, b, it);
            let probes = draw_probes(ns, cfg.k, cfg.distribution, seed)?;
            let wc = probes.complex();
            let targets = band
                .iter()
                .map(|&i| completed[i].as_ref().expect("stage one fills every slice").transpose() * &wc)
                .collect();
            let spec = band_spec(data, band, &probes, targets)?;
            let oracle = MisfitOracle::new(&spec).with_counter(counter.clone());
            let sub = solve_m_subproblem(&oracle, &m.m, &cfg.sub)?;
            m = m.with_model(sub.m)?;
            state.history.push(IterationRecord {
                band: b,
                iter: it,
                probe_seed: seed,
                phi_initial: sub.phi_initial,
                phi: sub.phi,
                model_error: metrics(data, &m),
                snr: snr.clone(),
                residual_before: Vec::new(),
                residual_after: Vec::new(),
                budgets: Vec::new(),
                completion: band.iter().map(|&i| statuses[i]).collect(),
                eps_relaxed: Vec::new(),
                lbfgs: sub.status,
                evaluations: sub.evaluations,
                pde_solves: counter.get() - before_count,
            });
            state.probes = Some(probes);
            state.k += 1;
        }
        Ok(m)
    })?;
    state.m = m_final;
    state.pde_solves = counter.get();
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{apply_mask, forward_data, make_mask, MaskPattern};
    use crate::lowrank::completable_mask;
    use crate::model::BoolMatrix;
    use std::f64::consts::PI;

    const AMP: f64 = 1e3;

    fn truth(nz: usize, nx: usize) -> ModelGrid {
        let v: Vec<f64> = (0..nx)
            .flat_map(|ix| {
                (0..nz).map(move |iz| {
                    let (z, x) = (iz as f64 / nz as f64, ix as f64 / nx as f64);
                    1600.0 + 700.0 * z + 300.0 * (-((z - 0.5).powi(2) + (x - 0.5).powi(2)) / 0.03).exp()
                })
            })
            .collect();
        ModelGrid::from_velocity(nz, nx, 20.0, &v).unwrap()
    }

    fn gradient_start(t: &ModelGrid) -> ModelGrid {
        let v: Vec<f64> = (0..t.nx)
            .flat_map(|_| (0..t.nz).map(move |iz| 1600.0 + 700.0 * iz as f64 / t.nz as f64))
            .collect();
        ModelGrid::from_velocity(t.nz, t.nx, t.h, &v).unwrap()
    }

    fn toy_data(t: &ModelGrid, freqs: &[f64], bands: Vec<Vec<usize>>, keep: f64, seed: u64) -> InversionData {
        // receivers two rows below the sources keep the zero-offset trace finite
        let src = Survey::colocated_line(t, 12, 2).unwrap();
        let rcv = Survey::colocated_line(t, 12, 4).unwrap();
        let survey = Survey::new(t, src.src_idx, rcv.rcv_idx).unwrap();
        let mut slices = Vec::new();
        let mut full = Vec::new();
        for (j, &f) in freqs.iter().enumerate() {
            let d = forward_data(t, &survey, 2.0 * PI * f, AMP).unwrap();
            let mask = if keep >= 1.0 {
                BoolMatrix::from_element(12, 12, true)
            } else if keep > 0.55 {
                completable_mask(12, 12, keep, 1, seed + j as u64).unwrap()
            } else {
                make_mask(12, 12, keep, seed + j as u64, MaskPattern::Entries).unwrap()
            };
            slices.push(SliceData {
                omega: d.omega,
                amp: AMP,
                observed: apply_mask(&mask, &d).unwrap(),
            });
            full.push(d.data);
        }
        InversionData {
            grid: t.clone(),
            survey,
            slices,
            bands,
            truth: Some(t.clone()),
            full: Some(full),
        }
    }

    fn cfg(outer: usize) -> JointConfig {
        JointConfig {
            k: 3,
            outer_iters: outer,
            rank: 5,
            ..JointConfig::default()
        }
    }

    #[test]
    fn snr_and_model_error_arithmetic() {
        let t = CMatrix::from_element(2, 2, crate::model::C64::new(1.0, 0.0));
        assert_eq!(snr_db(&t, &t).unwrap(), 300.0);
        assert!((snr_db(&t, &(&t * crate::model::C64::new(2.0, 0.0))).unwrap()).abs() < 1e-12);
        assert!((snr_db(&t, &(&t * crate::model::C64::new(1.1, 0.0))).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(snr_db(&CMatrix::zeros(2, 2), &t), Err(Error::ZeroReference)));
        let g = truth(6, 8);
        assert_eq!(model_error(&g, &g).unwrap(), 0.0);
        let doubled = g.with_model(g.m.iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!((model_error(&g, &doubled).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn seeds_differ_between_iterations_and_bands() {
        let mut seen = std::collections::HashSet::new();
        for band in 0..3 {
            for k in 1..=20 {
                assert!(seen.insert(probe_seed(7, band, k)));
            }
        }
        assert_eq!(probe_seed(7, 1, 2), probe_seed(7, 1, 2));
        assert_ne!(probe_seed(7, 1, 2), probe_seed(8, 1, 2));
    }

    #[test]
    fn continuation_schedule_rules() {
        let g = truth(6, 8);
        assert!(matches!(
            frequency_continuation(&[], g.clone(), |_, _, m| Ok(m)),
            Err(Error::EmptySchedule)
        ));
        assert!(matches!(
            frequency_continuation(&[vec![3.0], vec![]], g.clone(), |_, _, m| Ok(m)),
            Err(Error::EmptySchedule)
        ));
        assert!(frequency_continuation(&[vec![5.0], vec![3.0]], g.clone(), |_, _, m| Ok(m)).is_err());
        let mut calls = Vec::new();
        let out = frequency_continuation(&[vec![1.0, 2.0], vec![2.0, 3.0]], g.clone(), |i, band, m| {
            calls.push((i, band.to_vec()));
            m.with_model(m.m.iter().map(|v| v * 1.5).collect())
        })
        .unwrap();
        assert_eq!(calls, vec![(0, vec![1.0, 2.0]), (1, vec![2.0, 3.0])]);
        assert!((out.m[0] - 2.25 * g.m[0]).abs() < 1e-20);
    }

    #[test]
    fn zero_outer_iterations_return_the_start() {
        let t = truth(10, 16);
        let data = toy_data(&t, &[4.0], vec![vec![0]], 0.5, 1);
        let m0 = gradient_start(&t);
        let s = joint_invert(&cfg(0), &data, &m0).unwrap();
        assert_eq!(s.m, m0);
        assert!(s.history.is_empty());
        assert_eq!((s.k, s.pde_solves), (0, 0));
    }

    #[test]
    fn exact_model_and_complete_data_is_a_fixed_point() {
        let t = truth(10, 16);
        let data = toy_data(&t, &[4.0], vec![vec![0]], 1.0, 1);
        let d = disjoint_invert(&cfg(1), &data, &t).unwrap();
        assert!(d.history[0].phi_initial < 1e-20, "{}", d.history[0].phi_initial);
        assert!(model_error(&t, &d.m).unwrap() < 1e-9);
        // a full-rank cap lets completion reproduce the data to its budget
        let c = JointConfig {
            rank: 23,
            eps_rel: 1e-6,
            ..cfg(1)
        };
        let j = joint_invert(&c, &data, &t).unwrap();
        let e = model_error(&t, &j.m).unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn complete_mask_skips_stage_one() {
        let t = truth(10, 16);
        let data = toy_data(&t, &[4.0, 6.0], vec![vec![0], vec![1]], 1.0, 1);
        let s = disjoint_invert(&cfg(0), &data, &gradient_start(&t)).unwrap();
        for (c, full) in s.completed.iter().zip(data.full.as_ref().unwrap()) {
            assert!((c.as_ref().unwrap() - full).norm() <= 1e-6 * full.norm());
        }
    }

    #[test]
    fn pde_accounting_matches_formula() {
        let t = truth(10, 16);
        let data = toy_data(&t, &[4.0, 6.0], vec![vec![0, 1]], 0.5, 2);
        let m0 = gradient_start(&t);
        let c = JointConfig {
            sub: SubproblemOptions {
                iter_cap: 2,
                ..SubproblemOptions::default()
            },
            ..cfg(2)
        };
        let j = joint_invert(&c, &data, &m0).unwrap();
        for r in &j.history {
            assert_eq!(r.pde_solves, joint_pde_count(2, c.k, r.evaluations));
        }
        assert_eq!(j.pde_solves, j.history.iter().map(|r| r.pde_solves).sum::<u64>());
        let d = disjoint_invert(&c, &data, &m0).unwrap();
        for r in &d.history {
            assert_eq!(r.pde_solves, disjoint_pde_count(2, c.k, r.evaluations));
        }
    }

    #[test]
    fn joint_history_and_block_descent() {
        let t = truth(10, 16);
        let data = toy_data(&t, &[4.0, 6.0], vec![vec![0], vec![1]], 0.5, 3);
        let c = cfg(2);
        let s = joint_invert(&c, &data, &gradient_start(&t)).unwrap();
        assert_eq!(s.history.len(), 4);
        assert_eq!(s.k, 4);
        let seeds: std::collections::HashSet<u64> = s.history.iter().map(|r| r.probe_seed).collect();
        assert_eq!(seeds.len(), 4);
        for r in &s.history {
            assert!(r.phi <= r.phi_initial);
            for ((before, after), eps) in r.residual_before.iter().zip(&r.residual_after).zip(&r.budgets) {
                assert!(
                    *after <= before.max(eps * (1.0 + c.root.root_tol)) * (1.0 + 1e-12),
                    "{after} vs {before}, budget {eps}"
                );
            }
        }
        for f in s.factors.iter().flatten() {
            assert!(f.half_norm_sq() <= f.tau * (1.0 + 1e-12));
        }
    }

    #[test]
    fn joint_and_disjoint_reduce_model_error_on_toy() {
        let t = truth(12, 20);
        let m0 = gradient_start(&t);
        let e0 = model_error(&t, &m0).unwrap();
        let c = cfg(3);
        let partial = toy_data(&t, &[4.0, 7.0], vec![vec![0], vec![1]], 0.6, 4);
        let complete = toy_data(&t, &[4.0, 7.0], vec![vec![0], vec![1]], 1.0, 4);
        let residual_rule = JointConfig {
            budget_rule: BudgetRule::Residual,
            lambda: 1.0,
            ..c
        };
        // a 12-station survey is too small for the completion to be useful,
        // so only the arms that do not lean on it are held to descent here
        for s in [
            joint_invert(&residual_rule, &partial, &m0).unwrap(),
            disjoint_invert(&c, &complete, &m0).unwrap(),
        ] {
            let e = model_error(&t, &s.m).unwrap();
            assert!(e < 0.97 * e0, "model error {e0} -> {e}");
        }
    }

    #[test]
    fn data_radius_rule_starts_from_the_data_only_completion() {
        let t = truth(10, 16);
        let data = toy_data(&t, &[4.0], vec![vec![0]], 0.6, 5);
        let m0 = gradient_start(&t);
        let c = JointConfig { lambda: 1e-12, ..cfg(1) };
        // with a negligible shot term the joint step only keeps fitting the
        // data on the data-only radius
        let j = joint_invert(&c, &data, &m0).unwrap();
        let d = disjoint_invert(&c, &data, &m0).unwrap();
        let (fj, fd) = (j.factors[0].as_ref().unwrap(), d.factors[0].as_ref().unwrap());
        assert!((fj.tau - fd.tau).abs() <= 1e-12 * fd.tau);
        let p = CompletionProblem::new(data.slices[0].observed.clone(), c.rank, 0.0).unwrap();
        let (rj, rd) = (crate::lowrank::residual(&p, fj).unwrap(), crate::lowrank::residual(&p, fd).unwrap());
        assert!(rj <= rd * (1.0 + 1e-9), "{rj} vs {rd}");
        let r = &j.history[0];
        assert!(r.residual_after[0] <= r.residual_before[0] * (1.0 + 1e-12));
    }

    proptest::proptest! {
        #[test]
        fn probe_seeds_never_repeat_within_a_run(master in proptest::prelude::any::<u64>(), bands in 1usize..5, iters in 1usize..30) {
            let mut seen = std::collections::HashSet::new();
            for b in 0..bands {
                for k in 0..iters {
                    proptest::prop_assert!(seen.insert(probe_seed(master, b, k)));
                }
            }
        }
    }
}
