//! Sampling-based area and IoU estimators.
//!
//! These rasterization estimators use exact shape membership tests and never
//! touch the polygon-clipping path, so they serve as an independent
//! cross-check for the overlap kernel (and as a parallel workload for the
//! benchmark suite). Estimates are deterministic for a fixed seed regardless
//! of thread count: samples are split into fixed chunks with per-chunk RNG
//! streams.

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::overlap::{Aabb, ConvexPolygon};
use crate::primitives::RotatedPrimitive;

const CHUNKS: u64 = 64;

/// splitmix64; decorrelates per-chunk seeds.
pub(crate) fn mix_seed(seed: u64, chunk: u64) -> u64 {
    let mut z = seed ^ chunk.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn joint_aabb(a: &Aabb, b: &Aabb) -> Aabb {
    Aabb {
        min: [a.min[0].min(b.min[0]), a.min[1].min(b.min[1])],
        max: [a.max[0].max(b.max[0]), a.max[1].max(b.max[1])],
    }
}

fn chunk_sizes(samples: u64) -> impl Iterator<Item = (u64, u64)> {
    let base = samples / CHUNKS;
    let rem = samples % CHUNKS;
    (0..CHUNKS).map(move |c| (c, if c < rem { base + 1 } else { base }))
}

fn iou_chunk(
    a: &RotatedPrimitive,
    b: &RotatedPrimitive,
    bb: &Aabb,
    seed: u64,
    n: u64,
) -> (u64, u64) {
    let mut rng = SmallRng::seed_from_u64(seed);
    let (mut inter, mut union) = (0u64, 0u64);
    for _ in 0..n {
        let x = rng.random_range(bb.min[0]..bb.max[0]);
        let y = rng.random_range(bb.min[1]..bb.max[1]);
        let in_a = a.contains(x, y);
        let in_b = b.contains(x, y);
        if in_a && in_b {
            inter += 1;
        }
        if in_a || in_b {
            union += 1;
        }
    }
    (inter, union)
}

fn iou_from_counts(counts: impl Iterator<Item = (u64, u64)>) -> f64 {
    let (inter, union) = counts.fold((0u64, 0u64), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Single-threaded IoU estimate: uniform samples over the joint enclosing
/// box, hit ratio of intersection over union.
pub fn iou_estimate_serial(
    a: &RotatedPrimitive,
    b: &RotatedPrimitive,
    samples: u64,
    seed: u64,
) -> f64 {
    let bb = joint_aabb(&crate::overlap::enclosing_aabb(a), &crate::overlap::enclosing_aabb(b));
    iou_from_counts(chunk_sizes(samples).map(|(c, n)| iou_chunk(a, b, &bb, mix_seed(seed, c), n)))
}

/// Same estimate as [`iou_estimate_serial`], bit-identical, chunked across
/// the rayon pool when the `parallel` feature is enabled.
pub fn iou_estimate(a: &RotatedPrimitive, b: &RotatedPrimitive, samples: u64, seed: u64) -> f64 {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let bb = joint_aabb(
            &crate::overlap::enclosing_aabb(a),
            &crate::overlap::enclosing_aabb(b),
        );
        let counts: Vec<(u64, u64)> = chunk_sizes(samples)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(c, n)| iou_chunk(a, b, &bb, mix_seed(seed, c), n))
            .collect();
        iou_from_counts(counts.into_iter())
    }
    #[cfg(not(feature = "parallel"))]
    {
        iou_estimate_serial(a, b, samples, seed)
    }
}

fn point_in_convex(poly: &ConvexPolygon, x: f64, y: f64) -> bool {
    let v = poly.vertices();
    let n = v.len();
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        if (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) < 0.0 {
            return false;
        }
    }
    true
}

/// Sampling estimate of a convex polygon's area via half-plane membership
/// tests, independent of the shoelace formula.
pub fn polygon_area_estimate(poly: &ConvexPolygon, samples: u64, seed: u64) -> f64 {
    let Some(bb) = poly.aabb() else {
        return 0.0;
    };
    let box_area = (bb.max[0] - bb.min[0]) * (bb.max[1] - bb.min[1]);
    if box_area <= 0.0 {
        return 0.0;
    }
    let run_chunk = |(c, n): (u64, u64)| -> u64 {
        let mut rng = SmallRng::seed_from_u64(mix_seed(seed, c));
        let mut hits = 0u64;
        for _ in 0..n {
            let x = rng.random_range(bb.min[0]..bb.max[0]);
            let y = rng.random_range(bb.min[1]..bb.max[1]);
            if point_in_convex(poly, x, y) {
                hits += 1;
            }
        }
        hits
    };
    #[cfg(feature = "parallel")]
    let hits: u64 = {
        use rayon::prelude::*;
        chunk_sizes(samples)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(run_chunk)
            .sum()
    };
    #[cfg(not(feature = "parallel"))]
    let hits: u64 = chunk_sizes(samples).map(run_chunk).sum();
    hits as f64 / samples as f64 * box_area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlap::{area, rotated_iou, to_polygon};
    use crate::primitives::Category;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn parallel_matches_serial_exactly() {
        let a = RotatedPrimitive::new(Category::Rectangle, 0.0, 0.0, 2.0, 1.0, 0.3).unwrap();
        let b = RotatedPrimitive::new(Category::Rectangle, 0.5, 0.2, 1.5, 1.5, -0.7).unwrap();
        let s = iou_estimate_serial(&a, &b, 200_000, 42);
        let p = iou_estimate(&a, &b, 200_000, 42);
        assert_eq!(s, p);
    }

    #[test]
    fn estimate_tracks_exact_iou() {
        let mut rng = SmallRng::seed_from_u64(9);
        for i in 0..20 {
            let a = RotatedPrimitive::new(
                Category::Rectangle,
                0.0,
                0.0,
                rng.random_range(1.0..2.5),
                rng.random_range(1.0..2.5),
                rng.random_range(-1.5..1.5),
            )
            .unwrap();
            let b = RotatedPrimitive::new(
                Category::Rectangle,
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..2.5),
                rng.random_range(1.0..2.5),
                rng.random_range(-1.5..1.5),
            )
            .unwrap();
            let exact = rotated_iou(&a, &b);
            let mc = iou_estimate(&a, &b, 1_000_000, 1000 + i);
            assert!(
                (exact - mc).abs() <= 3e-3,
                "pair {i}: exact {exact} mc {mc}"
            );
        }
    }

    #[test]
    fn polygon_area_estimate_tracks_shoelace() {
        let rect =
            RotatedPrimitive::new(Category::Rectangle, 1.0, -2.0, 3.0, 1.5, 0.9).unwrap();
        let poly = to_polygon(&rect, 32);
        let exact = area(&poly);
        let mc = polygon_area_estimate(&poly, 1_000_000, 5);
        assert!(
            ((exact - mc) / exact).abs() <= 3e-3,
            "exact {exact} mc {mc}"
        );
    }
}
