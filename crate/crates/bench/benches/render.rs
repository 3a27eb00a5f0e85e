//! Rasterizer benchmarks: tiled forward, naive reference, and the
//! backward pass that dominates refinement cost.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use splatloc_bench::bench_scene;
use splatloc_core::photometry::photometric_l1;
use splatloc_core::render::{render, render_backward, render_reference, RenderConfig};

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_forward");
    for (prims, w, h) in [(2_000usize, 128usize, 96usize), (5_000, 256, 192)] {
        let (scene, trajectory, k) = bench_scene(prims, w, h);
        let pose = trajectory[5];
        let cfg = RenderConfig::default();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{prims}prims_{w}x{h}")),
            &(),
            |b, ()| b.iter(|| render(&scene, &pose, &k, &cfg)),
        );
    }
    group.finish();
}

fn forward_naive_reference(c: &mut Criterion) {
    let (scene, trajectory, k) = bench_scene(2_000, 128, 96);
    let pose = trajectory[5];
    let cfg = RenderConfig::default();
    c.bench_function("render_naive_2000prims_128x96", |b| {
        b.iter(|| render_reference(&scene, &pose, &k, &cfg))
    });
}

fn backward(c: &mut Criterion) {
    let (scene, trajectory, k) = bench_scene(2_000, 128, 96);
    let pose = trajectory[5];
    let query_pose = trajectory[6];
    let cfg = RenderConfig::default();
    let query = render(&scene, &query_pose, &k, &cfg).rgb;
    let base = render(&scene, &pose, &k, &cfg);
    let (_, weights) = photometric_l1(&base.rgb, &query, None);
    c.bench_function("render_backward_2000prims_128x96", |b| {
        b.iter(|| render_backward(&scene, &pose, &k, &cfg, &weights))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default()
        .sample_size(10)
        .warm_up_time(Duration::from_secs(1))
        .measurement_time(Duration::from_secs(3));
    targets = forward, forward_naive_reference, backward
}
criterion_main!(benches);
