//! Kernel benchmarks: overlap/IoU throughput, NMS with and without the
//! bounding-box prefilter, and the data-parallel batch entry points against
//! their sequential twins.
//!
//! Build with `--no-default-features` to measure the sequential fallback of
//! the dispatching entry points themselves.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use primgrasp::montecarlo;
use primgrasp::overlap::rotated_iou;
use primgrasp::primitives::{Category, RotatedPrimitive};
use primgrasp::scene::{generate_batch, generate_scene, SceneSpec};
use primgrasp::suppression::{rnms, NmsConfig, ScoredDetection};

fn random_detections(seed: u64, n: usize, side: f64) -> Vec<ScoredDetection> {
    let mut rng = SmallRng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let category = Category::ALL[rng.random_range(0..4usize)];
            let w = rng.random_range(24.0..72.0);
            let h = if category.requires_equal_axes() {
                w
            } else {
                rng.random_range(24.0..72.0)
            };
            ScoredDetection {
                primitive: RotatedPrimitive::new(
                    category,
                    rng.random_range(0.0..side),
                    rng.random_range(0.0..side),
                    w,
                    h,
                    rng.random_range(-1.5..1.5),
                )
                .unwrap(),
                score: rng.random_range(0.0..1.0),
                source_index: i,
            }
        })
        .collect()
}

fn bench_rotated_iou(c: &mut Criterion) {
    let rect_a = RotatedPrimitive::new(Category::Rectangle, 0.0, 0.0, 3.0, 1.5, 0.4).unwrap();
    let rect_b = RotatedPrimitive::new(Category::Rectangle, 0.8, 0.4, 2.0, 2.0, -0.9).unwrap();
    let ell_a = RotatedPrimitive::new(Category::Ellipse, 0.0, 0.0, 3.0, 1.5, 0.4).unwrap();
    let ell_b = RotatedPrimitive::new(Category::Ellipse, 0.8, 0.4, 2.0, 2.0, -0.9).unwrap();
    let mut g = c.benchmark_group("rotated_iou");
    g.bench_function("rect_rect", |b| {
        b.iter(|| rotated_iou(black_box(&rect_a), black_box(&rect_b)))
    });
    g.bench_function("ellipse_ellipse", |b| {
        b.iter(|| rotated_iou(black_box(&ell_a), black_box(&ell_b)))
    });
    g.finish();
}

fn bench_nms(c: &mut Criterion) {
    let dets = random_detections(42, 2000, 700.0);
    let fast = NmsConfig::default();
    let slow = NmsConfig {
        prefilter: false,
        ..fast
    };
    let mut g = c.benchmark_group("nms_2000");
    g.sample_size(10);
    g.measurement_time(Duration::from_secs(8));
    g.bench_function("prefilter", |b| b.iter(|| rnms(black_box(&dets), &fast)));
    g.bench_function("exhaustive", |b| b.iter(|| rnms(black_box(&dets), &slow)));
    g.finish();
}

fn bench_montecarlo(c: &mut Criterion) {
    let a = RotatedPrimitive::new(Category::Rectangle, 0.0, 0.0, 2.0, 1.0, 0.3).unwrap();
    let b_prim = RotatedPrimitive::new(Category::Rectangle, 0.5, 0.2, 1.5, 1.5, -0.7).unwrap();
    let mut g = c.benchmark_group("montecarlo_iou_1e6");
    g.sample_size(10);
    g.measurement_time(Duration::from_secs(10));
    g.bench_function("serial", |b| {
        b.iter(|| montecarlo::iou_estimate_serial(black_box(&a), black_box(&b_prim), 1_000_000, 7))
    });
    // Chunked across the rayon pool under the default `parallel` feature,
    // sequential fallback otherwise; results are identical either way.
    g.bench_function("dispatch", |b| {
        b.iter(|| montecarlo::iou_estimate(black_box(&a), black_box(&b_prim), 1_000_000, 7))
    });
    g.finish();
}

fn bench_scene_batch(c: &mut Criterion) {
    let spec = SceneSpec {
        width: 256,
        height: 256,
        ..SceneSpec::default()
    };
    let mut g = c.benchmark_group("scene_batch_8");
    g.sample_size(10);
    g.measurement_time(Duration::from_secs(12));
    g.bench_function("sequential_loop", |b| {
        b.iter(|| {
            (0..8)
                .map(|i| generate_scene(black_box(&spec), i).unwrap())
                .collect::<Vec<_>>()
        })
    });
    g.bench_function("batch_dispatch", |b| {
        b.iter(|| generate_batch(black_box(&spec), 0, 8).unwrap())
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_rotated_iou,
    bench_nms,
    bench_montecarlo,
    bench_scene_batch
);
criterion_main!(benches);
