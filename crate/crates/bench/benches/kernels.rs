use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use spixel_bench::{pattern, scene};
use spixel_core::autograd::Tape;
use spixel_core::net::{image_features, EsmNet, NetConfig};
use spixel_core::slic::{slic, SlicConfig};
use spixel_core::vision::{distance_field, Connectivity};

fn conv(c: &mut Criterion) {
    let x = pattern(&[1, 32, 64, 64]);
    let w = pattern(&[32, 32, 3, 3]);
    c.bench_function("conv2d 32x32x3x3 on 64x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w.clone());
            black_box(tape.conv2d(xv, wv, None, 1, 1).unwrap());
        })
    });
}

fn distance(c: &mut Criterion) {
    let pair = scene(256, 3);
    c.bench_function("distance field 256x256", |b| {
        b.iter(|| black_box(distance_field(&pair.labels, Connectivity::Four).unwrap()))
    });
}

fn forward(c: &mut Criterion) {
    let net = EsmNet::<f32>::init_weights(&NetConfig::default(), 0).unwrap();
    let pair = scene(64, 5);
    let feats = image_features::<f32>(&pair.image, 5).unwrap();
    c.bench_function("network forward 64x64", |b| b.iter(|| black_box(net.predict(feats.clone()).unwrap())));
}

fn slic_bench(c: &mut Criterion) {
    let pair = scene(128, 7);
    let cfg = SlicConfig { k: 64, ..SlicConfig::default() };
    c.bench_function("slic 128x128 k=64", |b| b.iter(|| black_box(slic(&pair.image, &cfg).unwrap())));
}

criterion_group!(benches, conv, distance, forward, slic_bench);
criterion_main!(benches);
