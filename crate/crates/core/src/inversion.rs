//! Simultaneous-shot misfit, its adjoint-state gradient, and an L-BFGS
//! driver for the model subproblem.
//!
//! For probes `W` (`Ns × K`) and per-frequency targets `T_ω` (`Nr × K`) the
//! misfit is
//!
//! ```text
//! phi(m) = Σ_ω (1/2K) ‖P H_ω(m)⁻¹ (a_ω Q W) − T_ω‖²_F
//! ```
//!
//! The `1/K` factor makes `phi` an unbiased estimate of the all-shot misfit
//! `½‖P H⁻¹ a Q − Dᵀ‖²` when `T_ω = D_ωᵀ W` and `E[WWᵀ] = I`.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::acquisition::Survey;
use crate::error::{Error, Result};
use crate::helmholtz::{Boundary, HelmholtzOperator, PdeCounter};
use crate::model::{validate_model, CMatrix, ModelGrid};
use crate::probes::ProbeBlock;

/// One frequency of the misfit: angular frequency, source amplitude and the
/// `Nr × K` simultaneous-shot target.
#[derive(Clone, Debug)]
pub struct FrequencyTerm {
    pub omega: f64,
    pub amp: f64,
    pub target: CMatrix,
}

#[derive(Clone, Debug)]
pub struct ShotMisfitSpec {
    /// Geometry template; its model is replaced by the evaluation point.
    pub grid: ModelGrid,
    pub survey: Survey,
    pub probes: ProbeBlock,
    pub terms: Vec<FrequencyTerm>,
    pub boundary: Boundary,
}

impl ShotMisfitSpec {
    pub fn new(grid: ModelGrid, survey: Survey, probes: ProbeBlock, terms: Vec<FrequencyTerm>) -> Result<Self> {
        if probes.ns() != survey.ns() {
            return Err(Error::ShapeMismatch {
                expected: (survey.ns(), probes.k()),
                found: probes.w.shape(),
            });
        }
        for t in &terms {
            if t.target.shape() != (survey.nr(), probes.k()) {
                return Err(Error::ShapeMismatch {
                    expected: (survey.nr(), probes.k()),
                    found: t.target.shape(),
                });
            }
            if !(t.omega > 0.0 && t.omega.is_finite()) {
                return Err(Error::InvalidArgument(format!("omega must be positive, got {}", t.omega)));
            }
        }
        Ok(Self {
            grid,
            survey,
            probes,
            terms,
            boundary: Boundary::Absorbing,
        })
    }

    pub fn k(&self) -> usize {
        self.probes.k()
    }

    fn grid_at(&self, m: &[f64]) -> Result<ModelGrid> {
        if m.len() != self.grid.len() {
            return Err(Error::ShapeMismatch {
                expected: (self.grid.len(), 1),
                found: (m.len(), 1),
            });
        }
        self.grid.with_model(m.to_vec())
    }
}

/// Forward fields `H⁻¹ a Q W` for every frequency, with their operators.
#[derive(Clone, Debug)]
pub struct ForwardFields {
    pub m: Vec<f64>,
    pub ops: Vec<Arc<HelmholtzOperator>>,
    pub fields: Vec<CMatrix>,
}

impl ForwardFields {
    /// Simultaneous data `P U` per frequency (`Nr × K`).
    pub fn simultaneous_data(&self, survey: &Survey) -> Vec<CMatrix> {
        self.fields.iter().map(|u| survey.gather(u)).collect()
    }
}

/// Solves for the simultaneous-source fields of every frequency at `m`
/// (`K` PDE solves per frequency).
pub fn simulate(spec: &ShotMisfitSpec, m: &[f64], counter: Option<&PdeCounter>) -> Result<ForwardFields> {
    let g = spec.grid_at(m)?;
    validate_model(&g)?;
    let w = spec.probes.complex();
    let per: Vec<(Arc<HelmholtzOperator>, CMatrix)> = spec
        .terms
        .par_iter()
        .map(|t| {
            let mut op = HelmholtzOperator::new(&g, t.omega, spec.boundary)?;
            if let Some(c) = counter {
                op = op.with_counter(c.clone());
            }
            let q = spec.survey.scatter_sources(&g, &w, t.amp)?;
            let u = op.solve(&q)?;
            Ok((Arc::new(op), u))
        })
        .collect::<Result<_>>()?;
    let (ops, fields) = per.into_iter().unzip();
    Ok(ForwardFields {
        m: m.to_vec(),
        ops,
        fields,
    })
}

/// Misfit and gradient oracle with PDE accounting. Forward fields computed
/// elsewhere at the same model (the `FW` products of the joint loop) can be
/// primed so the next evaluation at that model only needs adjoint solves.
pub struct MisfitOracle<'a> {
    spec: &'a ShotMisfitSpec,
    counter: Option<PdeCounter>,
    primed: Mutex<Option<ForwardFields>>,
}

impl<'a> MisfitOracle<'a> {
    pub fn new(spec: &'a ShotMisfitSpec) -> Self {
        Self {
            spec,
            counter: None,
            primed: Mutex::new(None),
        }
    }

    pub fn with_counter(mut self, counter: PdeCounter) -> Self {
        self.counter = Some(counter);
        self
    }

    pub fn prime(&self, fields: ForwardFields) {
        *self.primed.lock().expect("oracle lock") = Some(fields);
    }

    pub fn spec(&self) -> &ShotMisfitSpec {
        self.spec
    }

    /// `(phi, ∂phi/∂m)` at `m`.
    pub fn evaluate(&self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        let spec = self.spec;
        let primed = {
            let mut slot = self.primed.lock().expect("oracle lock");
            match slot.as_ref() {
                Some(f) if f.m == m => slot.take(),
                _ => None,
            }
        };
        let fwd = match primed {
            Some(f) => f,
            None => simulate(spec, m, self.counter.as_ref())?,
        };
        let n = m.len();
        let k = spec.k() as f64;
        let parts: Vec<(f64, Vec<f64>)> = spec
            .terms
            .par_iter()
            .zip(fwd.ops.par_iter().zip(fwd.fields.par_iter()))
            .map(|(t, (op, u))| {
                let r = spec.survey.gather(u) - &t.target;
                let phi = 0.5 * r.norm_squared() / k;
                let v = op.solve_adjoint(&spec.survey.scatter_receivers(n, &r))?;
                let mut g = vec![0.0; n];
                for (i, gi) in g.iter_mut().enumerate() {
                    let d = op.diag_derivative(i);
                    let mut s = 0.0;
                    for c in 0..u.ncols() {
                        s += (v[(i, c)].conj() * d * u[(i, c)]).re;
                    }
                    *gi = -s / k;
                }
                Ok((phi, g))
            })
            .collect::<Result<_>>()?;
        let mut phi = 0.0;
        let mut g = vec![0.0; n];
        for (p, gp) in parts {
            phi += p;
            for (a, b) in g.iter_mut().zip(gp) {
                *a += b;
            }
        }
        Ok((phi, g))
    }
}

/// Stateless form of [`MisfitOracle::evaluate`].
pub fn misfit_and_gradient(spec: &ShotMisfitSpec, m: &[f64]) -> Result<(f64, Vec<f64>)> {
    MisfitOracle::new(spec).evaluate(m)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    /// Stop when `‖g‖ ≤ gtol · max(1, ‖g₀‖)`.
    pub gtol: f64,
    /// Caps the first trial step of every line search so that
    /// `‖α d‖∞ ≤ max_step`.
    pub max_step: Option<f64>,
    pub max_evals_per_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            memory: 5,
            c1: 1e-4,
            c2: 0.9,
            gtol: 1e-6,
            max_step: None,
            max_evals_per_search: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStatus {
    GradientTolerance,
    IterationCap,
    /// No step with sufficient decrease was found; the best iterate is kept.
    LineSearchFailure,
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
}

struct Point {
    a: f64,
    f: f64,
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, or `None`
/// when it does not exist.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

enum Search {
    Wolfe(Point),
    /// Sufficient decrease only.
    Armijo(Point),
    Failed,
}

/// Line search for the strong Wolfe conditions (bracketing then zoom).
fn line_search<F>(
    eval: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    a0: f64,
    opts: &LbfgsOptions,
    evals: &mut usize,
) -> Result<Search>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d0 = dot(g0, dir);
    let mut probe = |a: f64, evals: &mut usize| -> Result<Point> {
        let xa = axpy(x, a, dir);
        let (f, g) = eval(&xa)?;
        *evals += 1;
        let f = if f.is_finite() { f } else { f64::INFINITY };
        let d = if f.is_finite() { dot(&g, dir) } else { f64::NAN };
        Ok(Point { a, f, d, x: xa, g })
    };
    let armijo = |p: &Point| p.f <= f0 + opts.c1 * p.a * d0;
    let curvature = |p: &Point| p.d.abs() <= -opts.c2 * d0;
    let budget = *evals + opts.max_evals_per_search.max(1);

    let mut prev = Point {
        a: 0.0,
        f: f0,
        d: d0,
        x: x.to_vec(),
        g: g0.to_vec(),
    };
    let mut a = a0;
    let (mut lo, mut hi);
    loop {
        let p = probe(a, evals)?;
        if !armijo(&p) || (prev.a > 0.0 && p.f >= prev.f) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature(&p) {
            return Ok(Search::Wolfe(p));
        }
        if p.d >= 0.0 {
            hi = prev;
            lo = p;
            break;
        }
        if *evals >= budget {
            return Ok(Search::Armijo(p));
        }
        prev = p;
        a *= 2.0;
    }
    // zoom: lo satisfies sufficient decrease and has the lowest value
    while *evals < budget {
        let (l, h) = (lo.a.min(hi.a), lo.a.max(hi.a));
        let width = h - l;
        if width <= 1e-14 * h.max(1e-300) {
            break;
        }
        let guess = if hi.f.is_finite() && hi.d.is_finite() {
            cubic_min(lo.a, lo.f, lo.d, hi.a, hi.f, hi.d)
        } else {
            None
        };
        let t = match guess {
            Some(t) if t > l + 0.1 * width && t < h - 0.1 * width => t,
            _ => 0.5 * (lo.a + hi.a),
        };
        let p = probe(t, evals)?;
        if !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return Ok(Search::Wolfe(p));
            }
            if p.d * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    if lo.a > 0.0 && lo.f < f0 {
        Ok(Search::Armijo(lo))
    } else {
        Ok(Search::Failed)
    }
}

/// Limited-memory BFGS (two-loop recursion) with a strong Wolfe line search.
///
/// `eval` may return a non-finite value to reject a point; the line search
/// then shortens the step. Accepted iterates have nonincreasing objective.
pub fn lbfgs_minimize<F>(mut eval: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut f, mut g) = eval(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("objective is not finite at the starting point".into()));
    }
    let mut evaluations = 1;
    let mut history = vec![f];
    let g0 = norm(&g);
    let stop = opts.gtol * g0.max(1.0);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut status = LbfgsStatus::IterationCap;

    if g0 == 0.0 || g0 <= stop {
        return Ok(LbfgsOutcome {
            x,
            f,
            grad_norm: g0,
            iterations,
            evaluations,
            status: LbfgsStatus::GradientTolerance,
            history,
        });
    }
    while iterations < opts.max_iter {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q = axpy(&q, -a, y);
            alphas.push((a, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0,
        };
        let mut r: Vec<f64> = q.iter().map(|v| gamma * v).collect();
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &r);
            r = axpy(&r, a - b, s);
        }
        let mut dir: Vec<f64> = r.iter().map(|v| -v).collect();
        if !(dot(&dir, &g) < 0.0) {
            // lost descent: restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
        }
        let mut a0 = if s_hist.is_empty() { (1.0 / norm_inf(&g)).min(1.0) } else { 1.0 };
        if let Some(cap) = opts.max_step {
            let dn = norm_inf(&dir);
            if a0 * dn > cap {
                a0 = cap / dn;
            }
        }
        let next = match line_search(&mut eval, &x, f, &g, &dir, a0, opts, &mut evaluations)? {
            Search::Wolfe(p) | Search::Armijo(p) => p,
            Search::Failed => {
                status = LbfgsStatus::LineSearchFailure;
                break;
            }
        };
        iterations += 1;
        let s: Vec<f64> = next.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory.max(1) {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = next.x;
        f = next.f;
        g = next.g;
        history.push(f);
        if norm(&g) <= stop {
            status = LbfgsStatus::GradientTolerance;
            break;
        }
    }
    Ok(LbfgsOutcome {
        grad_norm: norm(&g),
        x,
        f,
        iterations,
        evaluations,
        status,
        history,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubproblemOptions {
    /// L-BFGS iterations per call (a partial solve).
    pub iter_cap: usize,
    pub memory: usize,
    /// Largest relative change of any model entry in a first trial step.
    pub max_rel_step: f64,
    pub gtol: f64,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        Self {
            iter_cap: 5,
            memory: 5,
            max_rel_step: 0.05,
            gtol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubproblemOutcome {
    pub m: Vec<f64>,
    pub phi_initial: f64,
    pub phi: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Oracle evaluations, each costing one misfit gradient; trial models
    /// with a nonpositive entry are rejected without solves and not counted.
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

/// Partial L-BFGS solve of the model subproblem from `m0`.
///
/// Works in the scaled variable `x = m / m̄` (`m̄` the mean of `m0`) so step
/// caps and tolerances are dimensionless. Models with a nonpositive entry
/// are rejected through an infinite objective.
pub fn solve_m_subproblem(oracle: &MisfitOracle<'_>, m0: &[f64], opts: &SubproblemOptions) -> Result<SubproblemOutcome> {
    if opts.iter_cap == 0 {
        return Ok(SubproblemOutcome {
            m: m0.to_vec(),
            phi_initial: f64::NAN,
            phi: f64::NAN,
            grad_norm: f64::NAN,
            iterations: 0,
            evaluations: 0,
            status: LbfgsStatus::IterationCap,
        });
    }
    let scale = m0.iter().sum::<f64>() / m0.len().max(1) as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument("starting model must be positive".into()));
    }
    let x0: Vec<f64> = m0.iter().map(|v| v / scale).collect();
    let solved = std::cell::Cell::new(0);
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        if x.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Ok((f64::INFINITY, vec![0.0; x.len()]));
        }
        solved.set(solved.get() + 1);
        // the start maps back to m0 exactly so primed fields are found
        let m: Vec<f64> = if x == x0.as_slice() {
            m0.to_vec()
        } else {
            x.iter().map(|v| v * scale).collect()
        };
        let (phi, g) = oracle.evaluate(&m)?;
        Ok((phi, g.into_iter().map(|v| v * scale).collect()))
    };
    let lopts = LbfgsOptions {
        max_iter: opts.iter_cap,
        memory: opts.memory,
        gtol: opts.gtol,
        max_step: Some(opts.max_rel_step * norm_inf(&x0)),
        ..LbfgsOptions::default()
    };
    let out = lbfgs_minimize(eval, &x0, &lopts)?;
    Ok(SubproblemOutcome {
        m: out.x.iter().map(|v| v * scale).collect(),
        phi_initial: out.history[0],
        phi: out.f,
        grad_norm: out.grad_norm / scale,
        iterations: out.iterations,
        evaluations: solved.get(),
        status: out.status,
    })
}
