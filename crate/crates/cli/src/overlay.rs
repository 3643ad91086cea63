//! Paints detection outlines into a PPM for visual inspection.

use primgrasp::overlap::{enclosing_aabb, to_polygon, ELLIPSE_SEGMENTS};
use primgrasp::scene::Rgb8;
use primgrasp::suppression::ScoredDetection;

fn category_color(cat: primgrasp::Category) -> [u8; 3] {
    if cat.is_elliptic() {
        [235, 80, 200]
    } else {
        [240, 220, 40]
    }
}

/// Canvas side cap when inferring the size from detections.
const MAX_CANVAS: usize = 8192;

fn draw_segment(image: &mut Rgb8, a: [f64; 2], b: [f64; 2], color: [u8; 3]) {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    // Step cap keeps wild off-canvas coordinates from stalling the walk.
    let steps = ((len / 0.4).ceil().max(1.0) as usize).min(16 * MAX_CANVAS);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a[0] + (b[0] - a[0]) * t;
        let y = a[1] + (b[1] - a[1]) * t;
        if x >= 0.0 && y >= 0.0 && (x as usize) < image.width && (y as usize) < image.height {
            image.set_pixel(x as usize, y as usize, color);
        }
    }
}

/// Draws each detection's polygon outline over `base`; when no base image is
/// given, a black canvas large enough for every detection (capped at
/// [`MAX_CANVAS`] per side) is used.
pub fn render(detections: &[ScoredDetection], base: Option<Rgb8>, min_side: usize) -> Rgb8 {
    let mut image = base.unwrap_or_else(|| {
        let side = detections
            .iter()
            .map(|d| {
                let bb = enclosing_aabb(&d.primitive);
                (bb.max[0].max(bb.max[1]).ceil().max(0.0) as usize).saturating_add(1)
            })
            .max()
            .unwrap_or(0)
            .max(min_side);
        if side > MAX_CANVAS {
            log::warn!("overlay canvas clamped from {side} to {MAX_CANVAS} pixels per side");
        }
        let side = side.min(MAX_CANVAS);
        Rgb8::filled(side, side, [0, 0, 0])
    });
    for det in detections {
        let poly = to_polygon(&det.primitive, ELLIPSE_SEGMENTS);
        let verts = poly.vertices();
        let color = category_color(det.primitive.category);
        for i in 0..verts.len() {
            draw_segment(&mut image, verts[i], verts[(i + 1) % verts.len()], color);
        }
    }
    image
}
