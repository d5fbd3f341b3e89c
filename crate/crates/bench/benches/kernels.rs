use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddpm_core::analytic::{chain_kl_upper_bound, propagate_reverse_law};
use ddpm_core::covering::{greedy_epsilon_net, grid_cloud};
use ddpm_core::experiments::{run_theorem2_grid, Theorem2Config};
use ddpm_core::metrics::{mc_tv_diag, mc_tv_diag_gaussians, DiagGaussian};
use ddpm_core::sampler::run_reverse;
use ddpm_core::{DesignKind, DiagGaussianLaw, ReverseRunConfig, Schedule, ScoreOracle, Target};
use ndarray::Array2;

fn exact_laws(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact");
    for steps in [100, 1000, 10_000] {
        let s = Schedule::paper(steps, 2.0, 4.0).unwrap();
        let star = DesignKind::Star.build(&s);
        group.bench_with_input(BenchmarkId::new("propagate", steps), &steps, |b, _| {
            b.iter(|| propagate_reverse_law(&s, &star, 8, 1000, 1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("chain_bound", steps), &steps, |b, _| {
            b.iter(|| chain_kl_upper_bound(&s, &star, 8, 1000).unwrap())
        });
    }
    group.finish();

    let cfg = Theorem2Config::default();
    c.bench_function("theorem2 grid 3x21x21", |b| b.iter(|| run_theorem2_grid(black_box(&cfg)).unwrap()));
}

fn sampler(c: &mut Criterion) {
    let s = Schedule::linear(100, 1e-4, 0.02).unwrap();
    let star = DesignKind::Star.build(&s);
    let mut group = c.benchmark_group("reverse");
    group.sample_size(10);
    for d in [16, 256] {
        let oracle = ScoreOracle::exact(&Target::degenerate_gaussian(8, d).unwrap(), &s);
        group.bench_with_input(BenchmarkId::new("gaussian n=4096", d), &d, |b, _| {
            b.iter(|| run_reverse(&ReverseRunConfig::new(&s, &star, &oracle, 4096, 1)).unwrap())
        });
    }
    let atoms = Array2::from_shape_fn((64, 16), |(i, j)| ((i * 31 + j * 17) % 13) as f64 / 6.0 - 1.0);
    let mixture = Target::point_mixture(atoms, vec![1.0 / 64.0; 64]).unwrap();
    let oracle = ScoreOracle::exact(&mixture, &s);
    group.bench_function("mixture 64 atoms n=1024", |b| {
        b.iter(|| run_reverse(&ReverseRunConfig::new(&s, &star, &oracle, 1024, 1)).unwrap())
    });
    group.finish();
}

fn tv(c: &mut Criterion) {
    let p = DiagGaussianLaw::new(8, 1000, 1.0, 0.01).unwrap();
    let q = DiagGaussianLaw::new(8, 1000, 1.02, 0.0099).unwrap();
    c.bench_function("tv chi-square n=1e5 d=1000", |b| {
        b.iter(|| mc_tv_diag_gaussians(black_box(&p), black_box(&q), 100_000, 3).unwrap())
    });
    let gp = DiagGaussian::from(&DiagGaussianLaw::new(8, 32, 1.0, 0.01).unwrap());
    let gq = DiagGaussian::new(vec![0.01; 32], gp.var.iter().map(|v| v * 1.05).collect()).unwrap();
    c.bench_function("tv coordinatewise n=1e5 d=32", |b| {
        b.iter(|| mc_tv_diag(black_box(&gp), black_box(&gq), 100_000, 3).unwrap())
    });
}

fn covering(c: &mut Criterion) {
    let cloud = grid_cloud(2, 100, 50).unwrap();
    let mut group = c.benchmark_group("greedy net 10^4 points");
    group.sample_size(10);
    for eps in [0.1, 0.05] {
        group.bench_with_input(BenchmarkId::from_parameter(eps), &eps, |b, &eps| {
            b.iter(|| greedy_epsilon_net(&cloud, eps).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, exact_laws, sampler, tv, covering);
criterion_main!(benches);
