use criterion::{criterion_group, criterion_main, Criterion};
use dss_bench::scene_batch;
use dss_core::data::DESK_SIZE;
use dss_core::supervision::{LossWeights, SupervisionConfig};
use dss_core::train::{compute_step, predict};
use dss_core::{DssNet, ModelConfig};
use std::hint::black_box;

fn desk(c: &mut Criterion) {
    let (net, store) = DssNet::new(ModelConfig::default(), 7).unwrap();
    let store = store.cast::<f32>();
    let (images, masks) = scene_batch(4, DESK_SIZE).unwrap();
    let single = scene_batch(1, DESK_SIZE).unwrap().0;
    let (weights, sup) = (LossWeights::default(), SupervisionConfig::default());

    let mut group = c.benchmark_group("desk model 96x96");
    group.sample_size(10);
    group.bench_function("inference forward, 1 image", |b| {
        b.iter(|| predict(&net, &store, &[black_box(&single)]).unwrap())
    });
    group.bench_function("training step forward+backward, batch 4", |b| {
        b.iter(|| compute_step(&net, &store, black_box(&images), &masks, &weights, &sup).unwrap())
    });
    group.finish();
}

criterion_group!(benches, desk);
criterion_main!(benches);
