use criterion::{criterion_group, criterion_main, Criterion};
use dss_bench::filled;
use dss_core::kernels::conv::{conv2d, conv2d_backward, ConvSpec};
use dss_core::kernels::resize::resize_bilinear;
use dss_core::kernels::Padding;
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let x = filled(&[4, 32, 24, 24], 1);
    let dense = filled(&[32, 32, 3, 3], 2);
    let depthwise = filled(&[32, 1, 7, 7], 3);
    let bias = filled(&[32], 4);
    let spec = ConvSpec::same(Padding::Zero);

    c.bench_function("conv2d 3x3 32->32 24x24 batch 4", |b| {
        b.iter(|| conv2d(black_box(&x), &dense, Some(&bias), &spec).unwrap())
    });
    let dw = spec.with_groups(32);
    c.bench_function("conv2d depthwise 7x7 32 24x24 batch 4", |b| {
        b.iter(|| conv2d(black_box(&x), &depthwise, None, &dw).unwrap())
    });
    let y = conv2d(&x, &dense, Some(&bias), &spec).unwrap();
    let dy = filled(y.shape(), 5);
    c.bench_function("conv2d backward 3x3 32->32 24x24 batch 4", |b| {
        b.iter(|| conv2d_backward(black_box(&x), &dense, black_box(&dy), &spec, (true, true, true)).unwrap())
    });
}

fn resize(c: &mut Criterion) {
    let x = filled(&[4, 32, 24, 24], 6);
    c.bench_function("resize bilinear 24->96 32ch batch 4", |b| {
        b.iter(|| resize_bilinear(black_box(&x), 96, 96).unwrap())
    });
}

criterion_group!(benches, conv, resize);
criterion_main!(benches);
