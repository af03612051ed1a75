use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dfm_core::{
    run_experiment, simulate, theoretical_mse, CovarianceSpec, ExperimentOptions, FactorExtractor, HeteroMode, Method,
    RngStream, ScenarioConfig,
};

fn scenario(n: usize) -> ScenarioConfig {
    ScenarioConfig::new(0.7, HeteroMode::STANDARD_UNIFORM, 0.5, 1.0, n, 20240101)
}

fn extraction(c: &mut Criterion) {
    let mut group = c.benchmark_group("extract");
    for n in [50, 150, 500] {
        let cfg = scenario(n);
        let params = cfg.build_parameters(RngStream::new(cfg.seed)).unwrap();
        let (panel, _) = simulate(&params, 200, RngStream::new(1)).unwrap();
        for method in [Method::Gls, Method::FLp, Method::FKf, Method::DKf] {
            let ex = FactorExtractor::new(&params, method, CovarianceSpec::for_mode(method.mode(), None)).unwrap();
            group.bench_with_input(BenchmarkId::new(method.label(), n), &panel, |b, p| {
                b.iter(|| ex.extract(black_box(p)).unwrap())
            });
        }
    }
    group.finish();
}

fn mse(c: &mut Criterion) {
    let mut group = c.benchmark_group("theoretical_mse");
    for n in [50, 150, 500] {
        let cfg = scenario(n);
        let params = cfg.build_parameters(RngStream::new(cfg.seed)).unwrap();
        for method in [Method::FLp, Method::DLp, Method::SKf, Method::DKf] {
            group.bench_with_input(BenchmarkId::new(method.label(), n), &params, |b, p| {
                b.iter(|| theoretical_mse(black_box(p), method, None).unwrap())
            });
        }
    }
    group.finish();
}

fn experiment(c: &mut Criterion) {
    let mut cfg = scenario(150);
    cfg.replications = 50;
    let opts = ExperimentOptions::default();
    c.bench_function("experiment/n150_b50", |b| b.iter(|| run_experiment(black_box(&cfg), &opts).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = extraction, mse, experiment
}
criterion_main!(benches);
