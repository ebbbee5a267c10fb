use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use cmlr_core::datagen::{decouple, sample_clustered_dataset, sample_init};
use cmlr_core::em::{run_em, EmProblem, StoppingRule};
use cmlr_core::population::{population_em_step, McDesign};
use cmlr_core::{ModelConfig, RngSpec};

fn em_step(c: &mut Criterion) {
    let model = ModelConfig::along_first_axis(8, 1.0, 4.0).unwrap();
    let root = RngSpec::new(1);
    let theta = sample_init(&model, 1.0 / 14.0, &mut root.child("init").stream()).unwrap();
    let mut group = c.benchmark_group("em_step");
    for (m, n) in [(100, 100), (1000, 10), (10_000, 1)] {
        let data = sample_clustered_dataset(&model, m, n, &root.child("data")).unwrap();
        let clustered = EmProblem::clustered(&data.observations()).unwrap();
        let iid = EmProblem::iid(&decouple(&data, &mut root.child("decouple").stream())).unwrap();
        group.throughput(Throughput::Elements((m * n) as u64));
        group.bench_with_input(BenchmarkId::new("clustered", format!("{m}x{n}")), &clustered, |b, p| {
            b.iter(|| p.step(black_box(theta.view()), model.sigma()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("iid", format!("{m}x{n}")), &iid, |b, p| {
            b.iter(|| p.step(black_box(theta.view()), model.sigma()).unwrap())
        });
    }
    group.finish();
}

fn em_setup_and_run(c: &mut Criterion) {
    let model = ModelConfig::along_first_axis(8, 1.0, 4.0).unwrap();
    let root = RngSpec::new(2);
    let data = sample_clustered_dataset(&model, 1000, 10, &root.child("data")).unwrap();
    let theta = sample_init(&model, 1.0 / 14.0, &mut root.child("init").stream()).unwrap();
    c.bench_function("em_problem_setup/1000x10", |b| {
        b.iter(|| EmProblem::clustered(black_box(&data.observations())).unwrap())
    });
    let problem = EmProblem::clustered(&data.observations()).unwrap();
    let stop = StoppingRule::fixed(25);
    c.bench_function("run_em/1000x10/25", |b| {
        b.iter(|| run_em(&problem, theta.view(), model.sigma(), &stop, model.theta_star().view()).unwrap())
    });
}

fn population(c: &mut Criterion) {
    let model = ModelConfig::along_first_axis(8, 1.0, 4.0).unwrap();
    let theta = sample_init(&model, 1.0 / 14.0, &mut RngSpec::new(3).stream()).unwrap();
    let mut group = c.benchmark_group("population_em_step");
    group.sample_size(10);
    for n in [1, 10, 100] {
        let design = McDesign::new(model.clone(), n, 10_000, RngSpec::new(4)).unwrap();
        group.throughput(Throughput::Elements(10_000));
        group.bench_with_input(BenchmarkId::from_parameter(n), &design, |b, d| {
            b.iter(|| population_em_step(black_box(theta.view()), d).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, em_step, em_setup_and_run, population);
criterion_main!(benches);
