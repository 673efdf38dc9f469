//! Residual-constrained factorized low-rank completion.
//!
//! The completed slice is `T*(L·R)` with `L·R` living in the midpoint-offset
//! domain. For a radius `tau` the Lasso subproblem
//!
//! ```text
//! v(tau) = min ‖M ⊙ T*(LR) − D_s‖²_F + (λ/2)‖T*(LR)ᵀ W − FW‖²_F
//!          s.t. ½‖L‖²_F + ½‖R‖²_F ≤ tau
//! ```
//!
//! is solved by spectral projected gradient, and the radius matching a
//! residual budget `v(tau) = epsilon` is found by secant root finding on the
//! Pareto curve. The second term is present only in joint mode; `FW` holds
//! the model-predicted simultaneous shots (`Nr × K`) and `T*(LR)ᵀ W` the same
//! simultaneous shots formed from the completed data.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::midoff::MidOffMap;
use crate::model::{real_inner, AcquisitionMask, BoolMatrix, CMatrix, Factorization, FrequencySlice, RMatrix, C64};
use crate::probes::ProbeBlock;

/// Model-predicted simultaneous data `FW` together with the probes `W`.
#[derive(Clone, Debug)]
pub struct ShotTerm {
    pub fw: CMatrix,
    pub probes: ProbeBlock,
}

#[derive(Clone, Debug)]
pub struct CompletionProblem {
    observed: AcquisitionMask,
    map: MidOffMap,
    weights: RMatrix,
    lambda: f64,
    shot: Option<ShotTerm>,
    epsilon: f64,
    rank: usize,
}

/// Default rank cap: a tenth of the smaller survey dimension, at least 5,
/// never above the midpoint-offset dimension.
pub fn default_rank(ns: usize, nr: usize) -> usize {
    let k = ns.min(nr).div_ceil(10).max(5);
    k.min(ns + nr - 1)
}

impl CompletionProblem {
    /// Pure interpolation mode (`λ = 0`).
    pub fn new(observed: AcquisitionMask, rank: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
        }
        let (ns, nr) = (observed.ns(), observed.nr());
        let map = MidOffMap::new(ns, nr)?;
        if rank == 0 || rank > map.dim() {
            return Err(Error::BadShape(format!("rank cap {rank} outside 1..={}", map.dim())));
        }
        if observed.observed.data.shape() != (ns, nr) {
            return Err(Error::ShapeMismatch {
                expected: (ns, nr),
                found: observed.observed.data.shape(),
            });
        }
        let weights = observed.mask.map(|b| if b { 1.0 } else { 0.0 });
        Ok(Self {
            observed,
            map,
            weights,
            lambda: 0.0,
            shot: None,
            epsilon,
            rank,
        })
    }

    /// Adds the λ-weighted simultaneous-shot term (joint mode).
    pub fn with_shot_term(mut self, lambda: f64, shot: ShotTerm) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be > 0 with a shot term, got {lambda}")));
        }
        let (ns, nr) = (self.map.ns, self.map.nr);
        if shot.probes.ns() != ns {
            return Err(Error::ShapeMismatch {
                expected: (ns, shot.probes.k()),
                found: shot.probes.w.shape(),
            });
        }
        if shot.fw.shape() != (nr, shot.probes.k()) {
            return Err(Error::ShapeMismatch {
                expected: (nr, shot.probes.k()),
                found: shot.fw.shape(),
            });
        }
        self.lambda = lambda;
        self.shot = Some(shot);
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn map(&self) -> MidOffMap {
        self.map
    }

    pub fn observed(&self) -> &AcquisitionMask {
        &self.observed
    }

    pub fn shot(&self) -> Option<&ShotTerm> {
        self.shot.as_ref()
    }

    fn check(&self, f: &Factorization) -> Result<()> {
        let n = self.map.dim();
        if f.l.nrows() != n || f.r.ncols() != n || f.l.ncols() != f.r.nrows() {
            return Err(Error::ShapeMismatch {
                expected: (n, n),
                found: (f.l.nrows(), f.r.ncols()),
            });
        }
        Ok(())
    }

    /// Residual value for a midpoint-offset iterate `X = LR`, plus the
    /// midpoint-offset gradient `Z = T(G)` where `G` is the gradient with
    /// respect to the source-receiver completion `T*(X)`.
    fn value_and_z(&self, x: &CMatrix) -> (f64, CMatrix) {
        let a = self.map.adjoint(x).expect("shape checked");
        let ds = &self.observed.observed.data;
        let r1 = a.zip_zip_map(ds, &self.weights, |ai, di, wi| (ai - di) * wi);
        let mut value = r1.norm_squared();
        let mut g = r1 * C64::new(2.0, 0.0);
        if let Some(shot) = &self.shot {
            let w = shot.probes.complex();
            let r2 = a.transpose() * &w - &shot.fw;
            value += 0.5 * self.lambda * r2.norm_squared();
            g += (w * r2.transpose()) * C64::new(self.lambda, 0.0);
        }
        let z = self.map.forward(&g).expect("shape checked");
        (value, z)
    }

    /// Residual of the zero iterate, `v(0)`.
    pub fn zero_residual(&self) -> f64 {
        let mut v = self.observed.observed.data.norm_squared();
        if let Some(shot) = &self.shot {
            v += 0.5 * self.lambda * shot.fw.norm_squared();
        }
        v
    }

    /// Completed source-receiver slice `T*(LR)`.
    pub fn completed(&self, f: &Factorization) -> Result<FrequencySlice> {
        self.check(f)?;
        FrequencySlice::source_receiver(self.observed.observed.omega, self.map.adjoint(&f.product())?)
    }
}

/// Constraint left-hand side `‖M ⊙ T*(LR) − D_s‖² + (λ/2)‖T*(LR)ᵀW − FW‖²`.
pub fn residual(p: &CompletionProblem, f: &Factorization) -> Result<f64> {
    p.check(f)?;
    Ok(p.value_and_z(&f.product()).0)
}

/// Exact gradient of [`residual`] in `(L, R)` under `Re⟨·,·⟩`.
pub fn residual_gradient(p: &CompletionProblem, f: &Factorization) -> Result<(CMatrix, CMatrix)> {
    p.check(f)?;
    let (_, z) = p.value_and_z(&f.product());
    Ok((&z * f.r.adjoint(), f.l.adjoint() * &z))
}

/// Euclidean projection onto `½‖L‖² + ½‖R‖² ≤ tau` (a radial rescaling).
pub fn project_ball(f: &Factorization, tau: f64) -> Factorization {
    let tau = tau.max(0.0);
    let c = f.half_norm_sq();
    if c <= tau {
        return Factorization { tau, ..f.clone() };
    }
    let s = C64::new((tau / c).sqrt(), 0.0);
    Factorization {
        l: &f.l * s,
        r: &f.r * s,
        tau,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpgOptions {
    pub max_iter: usize,
    /// Nonmonotone line-search memory.
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub gamma: f64,
    pub max_backtracks: usize,
    /// Stop once the residual is within this relative distance of the
    /// budget; `None` runs the Lasso to its own stopping rule.
    pub target: Option<(f64, f64)>,
}

impl Default for SpgOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            memory: 10,
            gamma: 1e-4,
            max_backtracks: 30,
            target: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LassoOutcome {
    pub factors: Factorization,
    pub v_tau: f64,
    pub iterations: usize,
    /// Norm of the last projected-gradient step divided by the step length.
    pub grad_norm: f64,
    /// Residual after every accepted iteration (starting point first).
    pub history: Vec<f64>,
}

struct Iterate {
    l: CMatrix,
    r: CMatrix,
    f: f64,
    z: CMatrix,
}

impl Iterate {
    fn new(p: &CompletionProblem, l: CMatrix, r: CMatrix) -> Self {
        let (f, z) = p.value_and_z(&(&l * &r));
        Self { l, r, f, z }
    }

    fn grad(&self) -> (CMatrix, CMatrix) {
        (&self.z * self.r.adjoint(), self.l.adjoint() * &self.z)
    }
}

fn project_pair(l: &mut CMatrix, r: &mut CMatrix, tau: f64) {
    let c = 0.5 * (l.norm_squared() + r.norm_squared());
    if c > tau {
        let s = C64::new((tau / c).sqrt(), 0.0);
        *l *= s;
        *r *= s;
    }
}

/// Spectral projected gradient on the `tau`-ball from `f0` (projected first).
///
/// Barzilai–Borwein (BB1) steps with a nonmonotone Armijo line search over
/// the last `memory` residuals. Returns the best iterate seen.
pub fn solve_lasso(p: &CompletionProblem, tau: f64, f0: &Factorization, opts: &SpgOptions) -> Result<LassoOutcome> {
    p.check(f0)?;
    if opts.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let tau = tau.max(0.0);
    if tau == 0.0 {
        let z = Factorization::zeros(f0.l.nrows(), f0.r.ncols(), f0.rank_cap());
        let v = p.zero_residual();
        return Ok(LassoOutcome {
            factors: z,
            v_tau: v,
            iterations: 0,
            grad_norm: 0.0,
            history: vec![v],
        });
    }
    let (mut l0, mut r0) = (f0.l.clone(), f0.r.clone());
    project_pair(&mut l0, &mut r0, tau);
    let mut x = Iterate::new(p, l0, r0);
    let (mut gl, mut gr) = x.grad();
    let g0 = (gl.norm_squared() + gr.norm_squared()).sqrt();
    let mut history = vec![x.f];
    let mut best = (x.f, x.l.clone(), x.r.clone());
    if g0 == 0.0 || !g0.is_finite() {
        return Ok(LassoOutcome {
            factors: Factorization { l: best.1, r: best.2, tau },
            v_tau: best.0,
            iterations: 0,
            grad_norm: 0.0,
            history,
        });
    }
    let (alpha_min, alpha_max) = (1e-30, 1e30);
    let mut alpha = 1.0 / g0;
    let mut window: VecDeque<f64> = VecDeque::from([x.f]);
    let mut grad_norm = g0;
    let mut iterations = 0;
    let in_target = |f: f64| opts.target.is_some_and(|(eps, tol)| (f - eps).abs() <= tol * eps);

    while iterations < opts.max_iter {
        if in_target(x.f) {
            break;
        }
        let mut dl = &x.l - &gl * C64::new(alpha, 0.0);
        let mut dr = &x.r - &gr * C64::new(alpha, 0.0);
        project_pair(&mut dl, &mut dr, tau);
        dl -= &x.l;
        dr -= &x.r;
        let dnorm = (dl.norm_squared() + dr.norm_squared()).sqrt();
        grad_norm = dnorm / alpha;
        let xnorm = (x.l.norm_squared() + x.r.norm_squared()).sqrt();
        if dnorm <= 1e-14 * (1.0 + xnorm) {
            break;
        }
        let gtd = real_inner(&gl, &dl) + real_inner(&gr, &dr);
        if gtd >= 0.0 {
            break;
        }
        let fmax = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let tc = C64::new(t, 0.0);
            let trial = Iterate::new(p, &x.l + &dl * tc, &x.r + &dr * tc);
            if trial.f.is_finite() && trial.f <= fmax + opts.gamma * t * gtd {
                accepted = Some(trial);
                break;
            }
            // safeguarded quadratic interpolation along the segment
            let denom = 2.0 * (trial.f - x.f - t * gtd);
            let tq = if denom > 0.0 { -gtd * t * t / denom } else { 0.5 * t };
            t = if tq >= 0.1 * t && tq <= 0.9 * t { tq } else { 0.5 * t };
        }
        let Some(next) = accepted else {
            break;
        };
        iterations += 1;
        let (ngl, ngr) = next.grad();
        let (sl, sr) = (&next.l - &x.l, &next.r - &x.r);
        let sty = real_inner(&sl, &(&ngl - &gl)) + real_inner(&sr, &(&ngr - &gr));
        let sts = sl.norm_squared() + sr.norm_squared();
        alpha = if sty > 0.0 {
            (sts / sty).clamp(alpha_min, alpha_max)
        } else {
            (alpha * 10.0).min(alpha_max)
        };
        x = next;
        gl = ngl;
        gr = ngr;
        history.push(x.f);
        if x.f < best.0 {
            best = (x.f, x.l.clone(), x.r.clone());
        }
        window.push_back(x.f);
        if window.len() > opts.memory.max(1) {
            window.pop_front();
        }
    }
    Ok(LassoOutcome {
        factors: Factorization { l: best.1, r: best.2, tau },
        v_tau: best.0,
        iterations,
        grad_norm,
        history,
    })
}

/// `(tau, v(tau))` pairs visited by the root finder, in visit order.
///
/// Values are upper bounds on the true value function: an iterate found for
/// one radius is feasible for every larger radius, so each entry holds the
/// best residual among all iterates inside its ball. This makes the trace
/// nonincreasing in `tau`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParetoTrace {
    pub points: Vec<(f64, f64)>,
}

impl ParetoTrace {
    pub fn sorted(&self) -> Vec<(f64, f64)> {
        let mut p = self.points.clone();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        p
    }

    pub fn is_monotone(&self) -> bool {
        self.sorted().windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootOptions {
    /// Relative tolerance on `|v(tau) − epsilon|`.
    pub root_tol: f64,
    pub max_root_iter: usize,
    pub spg: SpgOptions,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            root_tol: 1e-2,
            max_root_iter: 10,
            spg: SpgOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompletionStatus {
    /// `v(tau)` within tolerance of the budget.
    Converged,
    /// Zero already satisfies the budget.
    ZeroFeasible,
    /// Root iterations exhausted; the best iterate is returned.
    Exhausted,
    /// Iterations exhausted above budget and the value function stopped
    /// decreasing with growing `tau`.
    BudgetTooTight,
}

#[derive(Clone, Debug)]
pub struct LogRow {
    pub iter: usize,
    pub tau: f64,
    pub v_tau: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct CompletionOutcome {
    pub factors: Factorization,
    pub trace: ParetoTrace,
    pub status: CompletionStatus,
    pub log: Vec<LogRow>,
    /// Residual of the returned factors.
    pub residual: f64,
}

struct Visited {
    tau: f64,
    norm: f64,
    v: f64,
    factors: Factorization,
}

/// Pareto root finding `v(tau) = epsilon` that reports its status instead of
/// failing; see [`solve_completion`] for the error-returning form.
pub fn complete(p: &CompletionProblem, f0: &Factorization, opts: &RootOptions) -> Result<CompletionOutcome> {
    p.check(f0)?;
    let eps = p.epsilon;
    let tol = opts.root_tol * eps.max(f64::MIN_POSITIVE);
    let v0 = p.zero_residual();
    let zero = Factorization::zeros(f0.l.nrows(), f0.r.ncols(), f0.rank_cap());
    let mut trace = ParetoTrace { points: vec![(0.0, v0)] };
    let mut log = vec![LogRow {
        iter: 0,
        tau: 0.0,
        v_tau: v0,
        grad_norm: 0.0,
    }];
    if eps >= v0 {
        return Ok(CompletionOutcome {
            factors: zero,
            trace,
            status: CompletionStatus::ZeroFeasible,
            log,
            residual: v0,
        });
    }
    let spg = SpgOptions {
        target: Some((eps, opts.root_tol)),
        ..opts.spg
    };
    let mut visited = vec![Visited {
        tau: 0.0,
        norm: 0.0,
        v: v0,
        factors: zero,
    }];
    let psi = |v: f64| v.sqrt() - eps.sqrt();

    let mut tau = f0.half_norm_sq();
    if !(tau > 0.0) {
        tau = v0.sqrt();
    }
    let mut status = CompletionStatus::Exhausted;
    // consecutive evaluations above (positive) or below (negative) the budget
    let mut streak = 0i32;
    for iter in 1..=opts.max_root_iter.max(1) {
        // warm start: best iterate already inside the ball, else the nearest
        // larger one projected
        let start = visited
            .iter()
            .filter(|s| s.norm <= tau)
            .min_by(|a, b| a.v.total_cmp(&b.v))
            .filter(|s| s.norm > 0.0)
            .or_else(|| visited.iter().filter(|s| s.norm > tau).min_by(|a, b| a.tau.total_cmp(&b.tau)))
            .map(|s| s.factors.clone())
            .unwrap_or_else(|| f0.clone());
        let out = solve_lasso(p, tau, &start, &spg)?;
        let norm = out.factors.half_norm_sq();
        let mut v = out.v_tau;
        // any iterate with a smaller norm is feasible here
        for s in &visited {
            if s.norm <= tau && s.v < v {
                v = s.v;
            }
        }
        visited.push(Visited {
            tau,
            norm,
            v: out.v_tau,
            factors: out.factors,
        });
        for point in trace.points.iter_mut() {
            if point.0 >= norm && out.v_tau < point.1 {
                point.1 = out.v_tau;
            }
        }
        trace.points.push((tau, v));
        log.push(LogRow {
            iter,
            tau,
            v_tau: v,
            grad_norm: out.grad_norm,
        });
        if (v - eps).abs() <= tol {
            status = CompletionStatus::Converged;
            break;
        }
        let psi_cur = psi(v);
        streak = match (psi_cur > 0.0, streak > 0) {
            (true, true) => streak + 1,
            (true, false) => 1,
            (false, false) => streak - 1,
            (false, true) => -1,
        };
        // Secant through the two largest radii still above the budget. The
        // value function is flat (zero) past the interpolation radius, so
        // points below the budget only bound the bracket.
        let mut above: Vec<(f64, f64)> = trace.points.iter().copied().filter(|p| p.1 > eps).collect();
        above.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (lo, v_lo) = above.last().copied().unwrap_or((0.0, v0));
        let (hi, v_hi) = trace
            .points
            .iter()
            .copied()
            .filter(|p| p.1 < eps)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap_or((f64::INFINITY, 0.0));
        let mut next = match above.as_slice() {
            [.., (t0, v0), (t1, v1)] => {
                let slope = (psi(*v1) - psi(*v0)) / (t1 - t0);
                if slope < 0.0 && slope.is_finite() {
                    t1 - psi(*v1) / slope
                } else {
                    f64::NAN
                }
            }
            _ => f64::NAN,
        };
        if !(next > lo && next < hi) {
            next = if hi.is_finite() {
                // Illinois-style regula falsi: damp the endpoint that keeps
                // being retained so the bracket shrinks from both sides
                let (mut p_lo, mut p_hi) = (psi(v_lo), psi(v_hi));
                if streak >= 2 {
                    p_hi *= 0.5f64.powi(streak - 1);
                } else if streak <= -2 {
                    p_lo *= 0.5f64.powi(-streak - 1);
                }
                let t = lo + p_lo * (hi - lo) / (p_lo - p_hi);
                if t > lo && t < hi {
                    t
                } else {
                    0.5 * (lo + hi)
                }
            } else {
                2.0 * tau.max(lo)
            };
        }
        if iter == opts.max_root_iter.max(1) && psi_cur > 0.0 && v >= 0.99 * best_above(&trace, tau, eps) {
            status = CompletionStatus::BudgetTooTight;
        }
        tau = next;
    }

    // the smallest-norm iterate meeting the budget, else the lowest residual
    let within = |s: &&Visited| s.v <= eps + tol;
    let chosen = visited
        .iter()
        .filter(within)
        .filter(|s| s.norm > 0.0 || s.v <= eps + tol)
        .min_by(|a, b| a.norm.total_cmp(&b.norm))
        .or_else(|| visited.iter().min_by(|a, b| a.v.total_cmp(&b.v)))
        .expect("at least the zero iterate");
    if status == CompletionStatus::BudgetTooTight && chosen.v <= eps + tol {
        status = CompletionStatus::Exhausted;
    }
    Ok(CompletionOutcome {
        residual: chosen.v,
        factors: chosen.factors.clone(),
        trace,
        status,
        log,
    })
}

/// Residual at the largest visited radius below `tau`, for stall detection.
fn best_above(trace: &ParetoTrace, tau: f64, eps: f64) -> f64 {
    trace
        .points
        .iter()
        .filter(|p| p.0 < tau)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|p| p.1)
        .unwrap_or(f64::INFINITY)
        .max(eps)
}

/// Finds `tau` with `v(tau) = epsilon` by secant iteration (on `√v`, which is
/// close to linear near the root) starting from `tau₀ = 0` and
/// `tau₁ = ½‖L0‖² + ½‖R0‖²`.
pub fn solve_completion(p: &CompletionProblem, f0: &Factorization, root_tol: f64) -> Result<(Factorization, ParetoTrace)> {
    let opts = RootOptions {
        root_tol,
        ..RootOptions::default()
    };
    solve_completion_with(p, f0, &opts)
}

pub fn solve_completion_with(p: &CompletionProblem, f0: &Factorization, opts: &RootOptions) -> Result<(Factorization, ParetoTrace)> {
    let out = complete(p, f0, opts)?;
    match out.status {
        CompletionStatus::BudgetTooTight => {
            let tau = out.trace.points.last().map(|p| p.0).unwrap_or(0.0);
            Err(Error::BudgetTooTight {
                epsilon: p.epsilon,
                v_tau: out.residual,
                tau,
            })
        }
        _ => Ok((out.factors, out.trace)),
    }
}

/// Random entry mask with exactly `round(keep_ratio · ns · nr)` kept entries
/// under which a rank-`rank` midpoint-offset matrix stays identifiable on the
/// checkerboard: every midpoint row and offset column keeps at least
/// `2·rank + 1` observed entries, or all of them when it has fewer. Entries are
/// visited in a seeded random order and hidden greedily while both lines
/// stay above their quota; fails if the target cannot be met.
pub fn completable_mask(ns: usize, nr: usize, keep_ratio: f64, rank: usize, seed: u64) -> Result<BoolMatrix> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::BadRatio(keep_ratio));
    }
    let map = MidOffMap::new(ns, nr)?;
    let n = map.dim();
    let total = ns * nr;
    let hide = total - (keep_ratio * total as f64).round() as usize;
    let (mut rows, mut cols) = (vec![0usize; n], vec![0usize; n]);
    for r in 0..ns {
        for c in 0..nr {
            let (i, j) = map.index(r, c);
            rows[i] += 1;
            cols[j] += 1;
        }
    }
    let quota = |count: usize| count.min(2 * rank + 1);
    let (row_quota, col_quota): (Vec<usize>, Vec<usize>) =
        (rows.iter().map(|&c| quota(c)).collect(), cols.iter().map(|&c| quota(c)).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = BoolMatrix::from_element(ns, nr, true);
    let mut hidden = 0;
    for flat in rand::seq::index::sample(&mut rng, total, total) {
        if hidden == hide {
            break;
        }
        let (r, c) = (flat / nr, flat % nr);
        let (i, j) = map.index(r, c);
        if rows[i] > row_quota[i] && cols[j] > col_quota[j] {
            mask[(r, c)] = false;
            rows[i] -= 1;
            cols[j] -= 1;
            hidden += 1;
        }
    }
    if hidden < hide {
        return Err(Error::InvalidArgument(format!(
            "cannot hide {hide} of {total} entries while keeping rank {rank} identifiable"
        )));
    }
    Ok(mask)
}

/// Sorted (descending) singular values with left/right singular vectors.
pub(crate) fn sorted_svd(a: &CMatrix) -> (CMatrix, Vec<f64>, CMatrix) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᴴ");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let u = CMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt = CMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    let s = order.iter().map(|&i| s[i]).collect();
    (u, s, vt)
}

/// Rank-`k` SVD start: `L = U√S`, `R = √S Vᴴ` of the zero-filled
/// midpoint-offset data.
pub fn init_factors(d_s_midoff: &FrequencySlice, k: usize) -> Result<Factorization> {
    let a = &d_s_midoff.data;
    let kmax = a.nrows().min(a.ncols());
    if k == 0 || k > kmax {
        return Err(Error::BadShape(format!("rank {k} outside 1..={kmax}")));
    }
    let (u, s, vt) = sorted_svd(a);
    let mut l = CMatrix::zeros(a.nrows(), k);
    let mut r = CMatrix::zeros(k, a.ncols());
    for j in 0..k {
        let sq = C64::new(s[j].sqrt(), 0.0);
        l.set_column(j, &(u.column(j) * sq));
        r.set_row(j, &(vt.row(j) * sq));
    }
    let f = Factorization { l, r, tau: 0.0 };
    let tau = f.half_norm_sq();
    Ok(Factorization { tau, ..f })
}

/// Nuclear norm via a dense SVD of the real embedding
/// `[[Re A, −Im A], [Im A, Re A]]`, whose singular values are those of `A`,
/// each twice. nalgebra's complex SVD can be off by ~1e-8 relative on
/// rank-deficient inputs; its real SVD is accurate to rounding.
pub fn nuclear_norm(a: &CMatrix) -> f64 {
    let (r, c) = a.shape();
    let real = RMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = a[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    0.5 * real.singular_values().iter().sum::<f64>()
}

/// Per-slice convergence log as CSV (`iter,tau,v_tau,grad_norm`).
pub fn write_log_csv(path: impl AsRef<Path>, log: &[LogRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,tau,v_tau,grad_norm")?;
    for row in log {
        writeln!(f, "{},{:e},{:e},{:e}", row.iter, row.tau, row.v_tau, row.grad_norm)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{apply_mask, make_mask, MaskPattern};
    use crate::midoff::to_midoff;
    use crate::probes::{draw_probes, ProbeDistribution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
    }

    /// Source-receiver data whose midpoint-offset image is rank `rank`.
    fn low_rank_data(ns: usize, nr: usize, rank: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ns + nr - 1;
        let x = gauss(&mut rng, n, rank) * gauss(&mut rng, rank, n);
        MidOffMap::new(ns, nr).unwrap().adjoint(&x).unwrap()
    }

    fn problem(d: &CMatrix, keep: f64, seed: u64, rank: usize, eps: f64) -> CompletionProblem {
        let (ns, nr) = d.shape();
        let mask = make_mask(ns, nr, keep, seed, MaskPattern::Entries).unwrap();
        let obs = apply_mask(&mask, &FrequencySlice::source_receiver(1.0, d.clone()).unwrap()).unwrap();
        CompletionProblem::new(obs, rank, eps).unwrap()
    }

    fn random_factors(n: usize, k: usize, seed: u64) -> Factorization {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Factorization::new(gauss(&mut rng, n, k), gauss(&mut rng, k, n), 0.0).unwrap()
    }

    fn shot_problem(seed: u64, lambda: f64) -> CompletionProblem {
        let d = low_rank_data(6, 5, 2, seed);
        let p = problem(&d, 0.6, seed, 3, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let probes = draw_probes(6, 3, ProbeDistribution::Gaussian, seed).unwrap();
        let fw = gauss(&mut rng, 5, 3);
        p.with_shot_term(lambda, ShotTerm { fw, probes }).unwrap()
    }

    #[test]
    fn default_rank_rule() {
        assert_eq!(default_rank(40, 40), 5);
        assert_eq!(default_rank(120, 80), 8);
        assert_eq!(default_rank(2, 2), 3);
    }

    #[test]
    fn zero_iterate_residual() {
        let d = low_rank_data(5, 4, 1, 1);
        let p = problem(&d, 0.5, 2, 2, 0.0);
        let z = Factorization::zeros(8, 8, 2);
        assert_eq!(residual(&p, &z).unwrap(), p.observed().observed.data.norm_squared());
    }

    #[test]
    fn full_mask_truncated_svd_residual_is_tail_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (ns, nr) = (6, 5);
        let d = gauss(&mut rng, ns, nr);
        let p = problem(&d, 1.0, 1, 3, 0.0);
        let map = p.map();
        let td = map.forward(&d).unwrap();
        let (u, s, vt) = sorted_svd(&td);
        let k = 3;
        let l = CMatrix::from_fn(td.nrows(), k, |r, c| u[(r, c)] * s[c]);
        let r = CMatrix::from_fn(k, td.ncols(), |r, c| vt[(r, c)]);
        let f = Factorization::new(l, r, 0.0).unwrap();
        // oracle: the truncated SVD error restricted to the checkerboard
        let err = &td - f.product();
        let on_support = map.project(&err).unwrap().norm_squared();
        let res = residual(&p, &f).unwrap();
        assert!((res - on_support).abs() <= 1e-10 * on_support);
        // and the full tail energy bounds it
        let tail: f64 = s[k..].iter().map(|x| x * x).sum();
        assert!(res <= tail * (1.0 + 1e-10));
    }

    #[test]
    fn consistent_shot_term_vanishes() {
        let mut p = shot_problem(3, 2.0);
        let f = random_factors(10, 3, 9);
        let a = p.map().adjoint(&f.product()).unwrap();
        let shot = p.shot.clone().unwrap();
        let fw = a.transpose() * shot.probes.complex();
        p.shot = Some(ShotTerm { fw, ..shot });
        let first = {
            let r1 = a.zip_zip_map(&p.observed.observed.data, &p.weights, |ai, di, wi| (ai - di) * wi);
            r1.norm_squared()
        };
        assert!((residual(&p, &f).unwrap() - first).abs() <= 1e-12 * first);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5u64 {
            let p = if seed % 2 == 0 {
                shot_problem(seed, 0.7 + seed as f64)
            } else {
                problem(&low_rank_data(6, 5, 2, seed), 0.6, seed, 3, 0.0)
            };
            let f = random_factors(10, 3, 20 + seed);
            let dir = random_factors(10, 3, 40 + seed);
            let (gl, gr) = residual_gradient(&p, &f).unwrap();
            let analytic = real_inner(&gl, &dir.l) + real_inner(&gr, &dir.r);
            let h = 1e-5;
            let shifted = |s: f64| {
                let g = Factorization::new(&f.l + &dir.l * C64::new(s, 0.0), &f.r + &dir.r * C64::new(s, 0.0), 0.0).unwrap();
                residual(&p, &g).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let rel = (fd - analytic).abs() / analytic.abs();
            assert!(rel < 1e-6, "seed {seed}: fd {fd} analytic {analytic} rel {rel}");
        }
    }

    #[test]
    fn gradient_zero_at_exact_fit() {
        let d = low_rank_data(5, 5, 1, 7);
        let p = problem(&d, 1.0, 1, 1, 0.0);
        let map = p.map();
        // exact rank-1 midpoint-offset factorization of the data
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = map.dim();
        let l = gauss(&mut rng, n, 1);
        let r = gauss(&mut rng, 1, n);
        assert_eq!(map.adjoint(&(&l * &r)).unwrap(), d);
        let f = Factorization::new(l, r, 0.0).unwrap();
        let (gl, gr) = residual_gradient(&p, &f).unwrap();
        assert!(gl.norm() < 1e-12 && gr.norm() < 1e-12);
    }

    #[test]
    fn gradient_in_l_linear_in_r() {
        let p = shot_problem(5, 1.0);
        let f = random_factors(10, 3, 2);
        let z = p.value_and_z(&f.product()).1;
        let g1 = &z * f.r.adjoint();
        let g2 = &z * (&f.r * C64::new(2.0, 0.0)).adjoint();
        assert!((g2 - g1 * C64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn ball_projection() {
        let l = CMatrix::from_element(2, 1, C64::new(2.0, 0.0));
        let r = CMatrix::from_element(1, 2, C64::new(2.0, 0.0));
        let f = Factorization::new(l, r, 0.0).unwrap();
        assert_eq!(f.half_norm_sq(), 8.0);
        let g = project_ball(&f, 2.0);
        assert!((&g.l - &f.l * C64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((&g.r - &f.r * C64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((g.half_norm_sq() - 2.0).abs() < 1e-12);
        let inside = project_ball(&f, 10.0);
        assert_eq!((inside.l, inside.r), (f.l.clone(), f.r.clone()));
    }

    #[test]
    fn lasso_at_zero_radius() {
        let p = shot_problem(8, 1.5);
        let f = random_factors(10, 3, 1);
        let out = solve_lasso(&p, 0.0, &f, &SpgOptions::default()).unwrap();
        assert_eq!(out.factors.half_norm_sq(), 0.0);
        let shot = p.shot().unwrap();
        let expected = p.observed().observed.data.norm_squared() + 0.75 * shot.fw.norm_squared();
        assert!((out.v_tau - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn lasso_recovers_rank_one_real_matrix() {
        // real x yᵀ in the midpoint-offset domain, 60% of the survey kept,
        // rank cap 2 and a radius well above the interpolating one
        let (ns, nr) = (20, 20);
        let map = MidOffMap::new(ns, nr).unwrap();
        let n = map.dim();
        let x: Vec<f64> = (0..n)
            .map(|i| if i % 3 == 0 { -1.0 } else { 1.0 } * (1.0 + 0.02 * i as f64))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|j| if j % 2 == 0 { 1.0 } else { -0.7 } * (1.5 - 0.01 * j as f64))
            .collect();
        let full_mo = CMatrix::from_fn(n, n, |i, j| C64::new(x[i] * y[j], 0.0));
        let d = map.adjoint(&full_mo).unwrap();
        let mask = completable_mask(ns, nr, 0.6, 1, 3).unwrap();
        let obs = apply_mask(&mask, &FrequencySlice::source_receiver(1.0, d.clone()).unwrap()).unwrap();
        let p = CompletionProblem::new(obs, 2, 0.0).unwrap();
        let start = init_factors(&to_midoff(&p.observed().observed).unwrap(), 2).unwrap();
        let tau = 2.0 * nuclear_norm(&full_mo);
        let opts = SpgOptions {
            max_iter: 5000,
            ..SpgOptions::default()
        };
        let out = solve_lasso(&p, tau, &start, &opts).unwrap();
        let rec = p.completed(&out.factors).unwrap().data;
        let rel = (&rec - &d).norm() / d.norm();
        assert!(rel < 1e-4, "relative error {rel}");
        assert!(out.factors.half_norm_sq() <= tau * (1.0 + 1e-12));
    }

    #[test]
    fn completable_mask_keeps_lines_identifiable() {
        let (ns, nr, rank) = (20, 16, 2);
        let mask = completable_mask(ns, nr, 0.6, rank, 8).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), (0.6f64 * 320.0).round() as usize);
        assert_eq!(mask, completable_mask(ns, nr, 0.6, rank, 8).unwrap());
        let map = MidOffMap::new(ns, nr).unwrap();
        let (mut total, mut kept) = (vec![[0usize; 2]; map.dim()], vec![[0usize; 2]; map.dim()]);
        for r in 0..ns {
            for c in 0..nr {
                let (i, j) = map.index(r, c);
                total[i][0] += 1;
                total[j][1] += 1;
                if mask[(r, c)] {
                    kept[i][0] += 1;
                    kept[j][1] += 1;
                }
            }
        }
        for (t, k) in total.iter().zip(&kept) {
            for a in 0..2 {
                assert!(k[a] >= t[a].min(2 * rank + 1));
            }
        }
        assert!(completable_mask(4, 4, 0.1, 3, 1).is_err());
        assert!(matches!(completable_mask(4, 4, 0.0, 1, 1), Err(Error::BadRatio(_))));
    }

    #[test]
    fn lasso_values_decrease_along_growing_tau() {
        let d = low_rank_data(8, 8, 2, 11);
        let p = problem(&d, 0.5, 4, 3, 0.0);
        let mut f = init_factors(&to_midoff(&p.observed().observed).unwrap(), 3).unwrap();
        let mut last = f64::INFINITY;
        for tau in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let out = solve_lasso(&p, tau, &f, &SpgOptions::default()).unwrap();
            assert!(out.v_tau <= last, "tau {tau}: {} > {last}", out.v_tau);
            assert!(out.factors.half_norm_sq() <= tau + 1e-12);
            last = out.v_tau;
            f = out.factors;
        }
    }

    #[test]
    fn spg_respects_nonmonotone_window() {
        let d = low_rank_data(8, 7, 2, 12);
        let p = problem(&d, 0.5, 5, 3, 0.0);
        let f = init_factors(&to_midoff(&p.observed().observed).unwrap(), 3).unwrap();
        let out = solve_lasso(&p, 5.0, &f, &SpgOptions::default()).unwrap();
        let h = &out.history;
        for i in 1..h.len() {
            let lo = i.saturating_sub(10);
            let fmax = h[lo..i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(h[i] <= fmax, "iteration {i}");
        }
    }

    #[test]
    fn init_factors_reconstruct() {
        let z = FrequencySlice::new(1.0, crate::model::Domain::MidpointOffset { ns: 3, nr: 3 }, CMatrix::zeros(5, 5)).unwrap();
        let f = init_factors(&z, 2).unwrap();
        assert_eq!(f.product(), CMatrix::zeros(5, 5));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gauss(&mut rng, 5, 5);
        let s = FrequencySlice::new(1.0, crate::model::Domain::MidpointOffset { ns: 3, nr: 3 }, a.clone()).unwrap();
        let f = init_factors(&s, 5).unwrap();
        assert!((f.product() - &a).norm() < 1e-9 * a.norm());

        let one = gauss(&mut rng, 5, 1) * gauss(&mut rng, 1, 5);
        let s = FrequencySlice::new(1.0, crate::model::Domain::MidpointOffset { ns: 3, nr: 3 }, one.clone()).unwrap();
        let f = init_factors(&s, 1).unwrap();
        assert!((f.product() - &one).norm() < 1e-9 * one.norm());
        assert!(init_factors(&s, 6).is_err());
    }

    #[test]
    fn zero_feasible_returns_immediately() {
        let d = low_rank_data(6, 6, 2, 2);
        let p = problem(&d, 0.5, 1, 3, 0.0);
        let eps = p.observed().observed.data.norm_squared();
        let p = p.with_epsilon(eps);
        let f0 = random_factors(11, 3, 5);
        let (f, trace) = solve_completion(&p, &f0, 1e-2).unwrap();
        assert_eq!(f.half_norm_sq(), 0.0);
        assert_eq!(trace.points.len(), 1);
    }

    #[test]
    fn completion_hits_budget_and_trace_is_monotone() {
        let d = low_rank_data(12, 12, 2, 21);
        let base = problem(&d, 0.5, 6, 3, 0.0);
        let eps = 1e-4 * base.observed().observed.data.norm_squared();
        let p = base.with_epsilon(eps);
        let f0 = init_factors(&to_midoff(&p.observed().observed).unwrap(), 3).unwrap();
        let out = complete(&p, &f0, &RootOptions::default()).unwrap();
        assert_eq!(out.status, CompletionStatus::Converged, "trace {:?}", out.trace);
        assert!((out.residual - eps).abs() <= 1e-2 * eps);
        assert!((residual(&p, &out.factors).unwrap() - out.residual).abs() <= 1e-9 * eps);
        assert!(out.trace.is_monotone());
    }

    #[test]
    fn nuclear_norm_bound_holds_for_outputs() {
        let d = low_rank_data(9, 7, 2, 31);
        let p = problem(&d, 0.6, 2, 3, 0.0);
        let f0 = init_factors(&to_midoff(&p.observed().observed).unwrap(), 3).unwrap();
        for tau in [0.1, 1.0, 10.0] {
            let out = solve_lasso(&p, tau, &f0, &SpgOptions::default()).unwrap();
            let f = out.factors;
            assert!(nuclear_norm(&f.product()) <= f.half_norm_sq() + 1e-8);
        }
    }

    #[test]
    fn rejects_inconsistent_shot_term() {
        let d = low_rank_data(4, 3, 1, 1);
        let p = problem(&d, 0.5, 1, 2, 0.0);
        let probes = draw_probes(4, 2, ProbeDistribution::Gaussian, 1).unwrap();
        assert!(p
            .clone()
            .with_shot_term(
                1.0,
                ShotTerm {
                    fw: CMatrix::zeros(4, 2),
                    probes: probes.clone()
                }
            )
            .is_err());
        assert!(p
            .clone()
            .with_shot_term(
                0.0,
                ShotTerm {
                    fw: CMatrix::zeros(3, 2),
                    probes
                }
            )
            .is_err());
        assert!(CompletionProblem::new(p.observed().clone(), 2, -1.0).is_err());
    }

    #[test]
    fn nuclear_norm_of_known_spectrum() {
        // unitary factors from QR of random complex matrices
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = gauss(&mut rng, 7, 7).qr().q();
        let v = gauss(&mut rng, 5, 5).qr().q();
        let mut s = CMatrix::zeros(7, 5);
        for (i, sv) in [4.0, 2.5, 1e-3, 0.0, 0.0].iter().enumerate() {
            s[(i, i)] = C64::new(*sv, 0.0);
        }
        let a = u * s * v.adjoint();
        assert!((nuclear_norm(&a) - 6.501).abs() < 1e-13);
    }

    proptest::proptest! {
        #[test]
        fn outputs_respect_ball_and_nuclear_bound(seed in 0u64..500, tau in 0.01f64..50.0, keep in 0.3f64..1.0) {
            let d = low_rank_data(6, 5, 2, seed);
            let p = problem(&d, keep, seed, 3, 0.0);
            let f0 = random_factors(10, 3, seed + 1);
            let f = solve_lasso(&p, tau, &f0, &SpgOptions::default()).unwrap().factors;
            proptest::prop_assert!(f.half_norm_sq() <= tau * (1.0 + 1e-12));
            proptest::prop_assert!(nuclear_norm(&f.product()) <= f.half_norm_sq() + 1e-8);
        }
    }
}
