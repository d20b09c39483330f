use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use affectlab_core::affect_space::{distance_matrix_with, VadTriple};
use affectlab_core::experiments::{reference_replay_store, run_on_fixtures, ExperimentId, RunOptions};
use affectlab_core::llm_client::ReplayBackend;
use affectlab_core::occ_engine::{enumerate_frames, Appraiser};
use affectlab_core::par::Execution;
use affectlab_core::stimuli::fixtures;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn points(n: usize, prefix: &str, rng: &mut StdRng) -> Vec<(String, VadTriple)> {
    (0..n)
        .map(|i| {
            let t = VadTriple::unit(rng.gen(), rng.gen(), rng.gen()).unwrap();
            (format!("{prefix}{i}"), t)
        })
        .collect()
}

fn distance(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(7);
    let rows = points(2000, "s", &mut rng);
    let cols = points(500, "w", &mut rng);
    let mut g = c.benchmark_group("distance_matrix_2000x500");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| distance_matrix_with(&rows, &cols, exec).unwrap())
        });
    }
    g.finish();
}

fn appraisal(c: &mut Criterion) {
    let frames: Vec<_> = enumerate_frames().into_iter().cycle().take(200_000).collect();
    let engine = Appraiser::default();
    let mut g = c.benchmark_group("appraise_200k_frames");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| engine.appraise_batch(&frames, exec))
        });
    }
    g.finish();
}

fn replay(c: &mut Criterion) {
    let fx = fixtures();
    let backend = ReplayBackend::new(reference_replay_store(fx));
    let mut g = c.benchmark_group("replay_rq2_latent");
    for (name, exec) in MODES {
        let options = RunOptions { exec, ..RunOptions::default() };
        g.bench_function(name, |b| b.iter(|| run_on_fixtures(ExperimentId::Rq2Latent, "", fx, &backend, &options).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, distance, appraisal, replay);
criterion_main!(benches);
