use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lrfwi_core::acquisition::{apply_mask, forward_data, make_mask, MaskPattern, Survey};
use lrfwi_core::helmholtz::{Boundary, HelmholtzOperator};
use lrfwi_core::inversion::{misfit_and_gradient, FrequencyTerm, ShotMisfitSpec};
use lrfwi_core::lowrank::{init_factors, solve_lasso, CompletionProblem, SpgOptions};
use lrfwi_core::midoff::{to_midoff, MidOffMap};
use lrfwi_core::probes::{draw_probes, ProbeDistribution};
use lrfwi_core::{CMatrix, FrequencySlice, ModelGrid, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn layered(nz: usize, nx: usize) -> ModelGrid {
    let v: Vec<f64> = (0..nx)
        .flat_map(|_| (0..nz).map(move |iz| 1500.0 + 1500.0 * iz as f64 / nz as f64))
        .collect();
    ModelGrid::from_velocity(nz, nx, 20.0, &v).unwrap()
}

fn helmholtz(c: &mut Criterion) {
    let g = layered(60, 120);
    let op = HelmholtzOperator::new(&g, 2.0 * PI * 10.0, Boundary::Absorbing).unwrap();
    c.bench_function("banded LU factor 60x120", |b| b.iter(|| black_box(op.to_band().factor().unwrap())));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rhs = CMatrix::from_fn(g.len(), 4, |_, _| C64::new(rng.sample(StandardNormal), 0.0));
    op.factorization().unwrap();
    c.bench_function("cached solve 60x120, 4 rhs", |b| b.iter(|| black_box(op.solve(&rhs).unwrap())));
}

fn completion(c: &mut Criterion) {
    let (ns, nr, rank) = (40, 40, 5);
    let map = MidOffMap::new(ns, nr).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut gauss = |r: usize, c: usize| CMatrix::from_fn(r, c, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let d = map.adjoint(&(gauss(map.dim(), rank) * gauss(rank, map.dim()))).unwrap();
    let mask = make_mask(ns, nr, 0.5, 2, MaskPattern::Entries).unwrap();
    let obs = apply_mask(&mask, &FrequencySlice::source_receiver(1.0, d).unwrap()).unwrap();
    let p = CompletionProblem::new(obs, rank, 0.0).unwrap();
    let f0 = init_factors(&to_midoff(&p.observed().observed).unwrap(), rank).unwrap();
    let tau = 0.5 * f0.tau;
    c.bench_function("SPG lasso 40x40 rank 5", |b| {
        b.iter(|| black_box(solve_lasso(&p, tau, &f0, &SpgOptions::default()).unwrap()))
    });
}

fn gradient(c: &mut Criterion) {
    let truth = layered(30, 60);
    let survey = Survey::colocated_line(&truth, 20, 2).unwrap();
    let probes = draw_probes(20, 4, ProbeDistribution::Gaussian, 3).unwrap();
    let omega = 2.0 * PI * 6.0;
    let data = forward_data(&truth, &survey, omega, 1e3).unwrap();
    let term = FrequencyTerm {
        omega,
        amp: 1e3,
        target: data.data.transpose() * probes.complex(),
    };
    let spec = ShotMisfitSpec::new(truth.clone(), survey, probes, vec![term]).unwrap();
    let m: Vec<f64> = truth.m.iter().map(|v| v * 1.02).collect();
    c.bench_function("misfit and gradient 30x60, K=4", |b| {
        b.iter(|| black_box(misfit_and_gradient(&spec, &m).unwrap()))
    });
}

criterion_group!(benches, helmholtz, completion, gradient);
criterion_main!(benches);
