//! Parallel vs sequential throughput of the data-parallel inner loops:
//! batch proposal encoding and the crop-strategy grid.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use oadp_core::compare::{prototype_table, run_grid, ALL_STRATEGIES};
use oadp_core::encoder::EncoderConfig;
use oadp_core::geometry::{BBox, Proposal};
use oadp_core::pipeline::{oake_embeddings, oake_embeddings_seq};
use oadp_core::synthetic::{distractor_scene_spec, gen_scene, gen_weights};

fn bench_oake_batch(c: &mut Criterion) {
    let weights = gen_weights(&EncoderConfig::toy(), 1);
    let scene = gen_scene(&distractor_scene_spec(3, 4));
    let image = scene.image;
    let mut group = c.benchmark_group("oake_batch");
    for n in [8usize, 64] {
        let proposals: Vec<Proposal> = (0..n)
            .map(|i| {
                let off = (i % 7) as f64 * 3.0;
                Proposal::new(
                    BBox::new(10.0 + off, 12.0 + off, 34.0 + off, 40.0 + off).unwrap(),
                    0.8,
                )
                .unwrap()
            })
            .collect();
        group.bench_with_input(BenchmarkId::new("sequential", n), &proposals, |b, props| {
            b.iter(|| oake_embeddings_seq(black_box(&image), props, &weights, 1.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &proposals, |b, props| {
            b.iter(|| oake_embeddings(black_box(&image), props, &weights, 1.0).unwrap())
        });
    }
    group.finish();
}

fn bench_compare_grid(c: &mut Criterion) {
    let weights = gen_weights(&EncoderConfig::toy(), 1);
    let table = prototype_table(&weights, 4, 0, 2.0).unwrap();
    let scenes: Vec<_> = (0..16).map(|s| distractor_scene_spec(s, 4)).collect();
    let mut group = c.benchmark_group("compare_grid");
    group.sample_size(10);
    // run_grid parallelizes over scenes when the `parallel` feature is on;
    // a one-thread pool provides the sequential reference.
    group.bench_function("parallel", |b| {
        b.iter(|| {
            run_grid(black_box(&scenes), &weights, &table, 2.0, &ALL_STRATEGIES, &[false, true])
                .unwrap()
        })
    });
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    group.bench_function("single_thread", |b| {
        single.install(|| {
            b.iter(|| {
                run_grid(
                    black_box(&scenes),
                    &weights,
                    &table,
                    2.0,
                    &ALL_STRATEGIES,
                    &[false, true],
                )
                .unwrap()
            })
        })
    });
    group.finish();
}

criterion_group!(benches, bench_oake_batch, bench_compare_grid);
criterion_main!(benches);
