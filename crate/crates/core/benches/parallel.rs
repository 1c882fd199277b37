//! Compare the rayon data-parallel paths against a single-thread pool on
//! the three workloads that fan out per sample: batch gradient
//! accumulation, per-image evaluation scoring, and scene generation.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use slotbench_core::metrics::{fg_ari, MboDirection};
use slotbench_core::model::{init_params, sample_slot_noise, target_encode, ModelConfig};
use slotbench_core::rng::stream;
use slotbench_core::scene::{generate_scene, SceneSpec};
use slotbench_core::train::sample_loss_and_grads;

fn single_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
}

fn bench_batch_gradients(c: &mut Criterion) {
    let cfg = ModelConfig::desk();
    let params = init_params(&cfg, &mut stream(0, "init"));
    let teacher = params.subset("encoder.");
    let scenes: Vec<_> = (0..4)
        .map(|i| generate_scene(&SceneSpec::desk(), i).unwrap())
        .collect();
    let targets: Vec<Vec<f64>> = scenes
        .iter()
        .map(|s| target_encode(&s.image, &teacher, &cfg.encoder).unwrap())
        .collect();
    let noise = sample_slot_noise(&cfg.slots, cfg.slots.n_slots, &mut stream(0, "noise"));

    let run_batch = || {
        let grads = slotbench_core::parallel::map_indexed(scenes.len(), |i| {
            sample_loss_and_grads(
                &params,
                None,
                &cfg,
                &scenes[i].image,
                &targets[i],
                Some(3),
                &noise,
            )
            .unwrap()
        });
        black_box(grads.len())
    };

    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(run_batch));
    let pool = single_thread_pool();
    group.bench_function("sequential", |b| b.iter(|| pool.install(run_batch)));
    group.finish();
}

fn bench_eval_scoring(c: &mut Criterion) {
    let scenes: Vec<_> = (0..32)
        .map(|i| generate_scene(&SceneSpec::desk(), 1000 + i).unwrap())
        .collect();

    let score_all = || {
        let scores = slotbench_core::parallel::map_indexed(scenes.len(), |i| {
            let gt = &scenes[i].seg;
            let pred = &scenes[(i + 1) % scenes.len()].seg;
            (
                fg_ari(pred, gt).unwrap(),
                slotbench_core::metrics::mbo(pred, gt, MboDirection::PerGt).unwrap(),
            )
        });
        black_box(scores.len())
    };

    let mut group = c.benchmark_group("eval_scoring");
    group.bench_function("parallel", |b| b.iter(score_all));
    let pool = single_thread_pool();
    group.bench_function("sequential", |b| b.iter(|| pool.install(score_all)));
    group.finish();
}

fn bench_scene_generation(c: &mut Criterion) {
    let spec = SceneSpec::desk();
    let generate_all = || {
        let scenes = slotbench_core::parallel::map_indexed(16, |i| {
            generate_scene(&spec, i as u64).unwrap().seg.labels[0]
        });
        black_box(scenes.len())
    };

    let mut group = c.benchmark_group("scene_generation");
    group.bench_function("parallel", |b| b.iter(generate_all));
    let pool = single_thread_pool();
    group.bench_function("sequential", |b| b.iter(|| pool.install(generate_all)));
    group.finish();
}

criterion_group!(benches, bench_batch_gradients, bench_eval_scoring, bench_scene_generation);
criterion_main!(benches);
