use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crossdiff_bench::{basis, positive_state, reference_noise, reference_params, reference_run};
use crossdiff_core::assumptions::{certify_lemma, LemmaKind};
use crossdiff_core::galerkin::{assemble_divergence_term, MatrixKind};
use crossdiff_core::noise::sample_path;
use crossdiff_core::run::StepConfig;
use crossdiff_core::stepper::{entropy_implicit_step, euler_maruyama_step, run_path, transformed_step, EntropyField, ZeroDrift};

fn bench_divergence(c: &mut Criterion) {
    let p = reference_params();
    let mut group = c.benchmark_group("divergence_term");
    for modes in [8, 16, 32, 64] {
        let b = basis(modes);
        let u = positive_state(&b);
        group.bench_with_input(BenchmarkId::from_parameter(modes), &modes, |bench, _| {
            bench.iter(|| assemble_divergence_term(black_box(&u), 0, &b, &p, MatrixKind::A).unwrap())
        });
    }
    group.finish();
}

fn bench_steps(c: &mut Criterion) {
    let p = reference_params();
    let noise = reference_noise();
    let b = basis(16);
    let u = positive_state(&b);
    let dw = sample_path(1e-3, 1, 2, noise.modes, 3).unwrap().increment_between(0.0, 1e-3).unwrap();
    let w = EntropyField::from_primal(&u.values, &b, &p).unwrap();
    let cfg = StepConfig::new(1e-3);

    let mut group = c.benchmark_group("step");
    group.bench_function("euler_maruyama", |bench| {
        bench.iter(|| euler_maruyama_step(black_box(&u), &dw, 1e-3, &b, &p, &noise).unwrap())
    });
    group.bench_function("transformed", |bench| {
        bench.iter(|| transformed_step(black_box(&u), &dw, 1e-3, &b, &p, &noise).unwrap())
    });
    group.bench_function("entropy_implicit", |bench| {
        bench.iter(|| entropy_implicit_step(black_box(&w), &w.u, &ZeroDrift, 1e-3, &cfg, &b, &p).unwrap())
    });
    group.finish();
}

fn bench_paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_path");
    group.sample_size(10);
    for modes in [8, 16, 32] {
        let cfg = reference_run(modes, 0.02);
        group.bench_with_input(BenchmarkId::from_parameter(modes), &modes, |bench, _| {
            bench.iter(|| run_path(black_box(&cfg), 1).unwrap())
        });
    }
    group.finish();
}

fn bench_certificate(c: &mut Criterion) {
    let p = reference_params();
    let mut group = c.benchmark_group("certify_lemma");
    group.sample_size(10);
    for kind in LemmaKind::ALL {
        group.bench_function(kind.name(), |bench| bench.iter(|| certify_lemma(kind, black_box(&p), 10_000, 7).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_divergence, bench_steps, bench_paths, bench_certificate);
criterion_main!(benches);
