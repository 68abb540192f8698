use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nnkit::Parallelism;
use nsv::datasets::{generate_dataset, DatasetConfig};
use nsv::intdim::{estimate_id_lb, PointCloud};
use nsv::stage1::Stage1Model;
use nsv::systems::{SystemKind, SystemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn generation(c: &mut Criterion) {
    let spec = SystemSpec::preset(SystemKind::RigidDoublePendulum);
    let cfg = DatasetConfig {
        trajectories: 8,
        steps: 20,
        ..Default::default()
    };
    let mut g = c.benchmark_group("generate");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| black_box(generate_dataset(&spec, &cfg, m).unwrap()))
        });
    }
    g.finish();
}

fn levina_bickel(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rows: Vec<Vec<f64>> = (0..2000)
        .map(|_| (0..64).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let cloud = PointCloud::new(&rows).unwrap();
    let mut g = c.benchmark_group("levina_bickel_2000x64");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| black_box(estimate_id_lb(&cloud, 20, m).unwrap()))
        });
    }
    g.finish();
}

fn encode(c: &mut Criterion) {
    let model = Stage1Model::new(64, 64, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch: Vec<Vec<f64>> = (0..64)
        .map(|_| {
            (0..6 * 64 * 64)
                .map(|_| rng.random_range(0.0..1.0))
                .collect()
        })
        .collect();
    let mut g = c.benchmark_group("predict_64_pairs");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| black_box(model.predict_planes(&batch, m).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, generation, levina_bickel, encode);
criterion_main!(benches);
