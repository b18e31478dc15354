//! Data-parallel stages timed on both execution paths.
//!
//! Without the `parallel` feature both variants run on one thread, which
//! gives the baseline the parallel numbers should be read against.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lgtm_core::diffusion::standard_normal;
use lgtm_core::exec::Execution;
use lgtm_core::harness::toy_clips;
use lgtm_core::kinematics::KinematicsConfig;
use lgtm_core::metrics::{clip_artifacts, r_precision, FeatureSet, Origin};
use lgtm_core::motion::{compute_stats_with, MotionSequence};
use lgtm_core::text::Decomposer;

const PATHS: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn features(n: usize, dim: usize, seed: u64, origin: Origin) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| standard_normal(dim, &mut rng).into_iter().map(f64::from).collect())
        .collect();
    FeatureSet::new(rows, origin, "bench").unwrap()
}

fn corpus() -> Vec<MotionSequence> {
    let mut clips: Vec<MotionSequence> = Vec::new();
    for seed in 0..4 {
        clips.extend(toy_clips(seed).unwrap().into_iter().map(|c| c.motion));
    }
    clips
}

fn bench_r_precision(c: &mut Criterion) {
    let motion = features(512, 64, 1, Origin::Motion);
    let text = features(512, 64, 2, Origin::Text);
    let mut group = c.benchmark_group("r_precision");
    for (name, exec) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| r_precision(black_box(&motion), black_box(&text), 32, &[1, 2, 3], 0, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_stats(c: &mut Criterion) {
    let clips = corpus();
    let mut group = c.benchmark_group("compute_stats");
    for (name, exec) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| compute_stats_with(black_box(&clips), exec).unwrap())
        });
    }
    group.finish();
}

fn bench_artifacts(c: &mut Criterion) {
    let clips = corpus();
    let cfg = KinematicsConfig::default();
    let mut group = c.benchmark_group("clip_artifacts");
    for (name, exec) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.try_map(clips.len(), |i| clip_artifacts(&clips[i], &cfg)).unwrap())
        });
    }
    group.finish();
}

fn bench_decompose(c: &mut Criterion) {
    let verbs = ["walks forward", "waves his right hand", "kicks with the left leg", "nods", "jumps", "turns around"];
    let captions: Vec<String> = (0..2000)
        .map(|i| format!("a person {} and {}", verbs[i % verbs.len()], verbs[(i / 6) % verbs.len()]))
        .collect();
    let decomposer = Decomposer::offline();
    let mut group = c.benchmark_group("decompose_all_offline");
    for (name, exec) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| decomposer.decompose_all(black_box(&captions), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_r_precision, bench_stats, bench_artifacts, bench_decompose);
criterion_main!(benches);
