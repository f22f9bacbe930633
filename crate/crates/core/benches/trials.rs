use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kgmark::eval::{run_trials, EmbeddingSource, ExperimentConfig};
use kgmark::par::Execution;
use kgmark::synthetic::SbmConfig;

fn small_config(execution: Execution) -> ExperimentConfig {
    ExperimentConfig {
        graph: kgmark::eval::GraphSource::Synthetic(SbmConfig { n_entities: 200, ..SbmConfig::default() }),
        embedding: EmbeddingSource::Structured { dim: 32, spread: 0.5 },
        graph_pool: 2,
        trials: 8,
        rank_metrics: false,
        cosine_steps: vec![75],
        execution,
        ..ExperimentConfig::default()
    }
}

fn trials(c: &mut Criterion) {
    kgmark::par::init_from_env();
    let mut group = c.benchmark_group("trials");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let cfg = small_config(exec);
        group.bench_with_input(BenchmarkId::new("detect_roc", name), &cfg, |b, cfg| {
            b.iter(|| black_box(run_trials(cfg).unwrap()))
        });
    }
    group.finish();
}

fn fan_out(c: &mut Criterion) {
    let mut group = c.benchmark_group("map_indexed");
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                kgmark::par::map_indexed(64, exec, |i| {
                    let g = kgmark::rng::normal_grid(&mut kgmark::rng::seeded(i as u64), 32, 32, 1.0);
                    kgmark::spectral::fft2(&g).unwrap().energy()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, trials, fan_out);
criterion_main!(benches);
