//! Exact rotated-shape overlap via convex polygon clipping.
//!
//! Rectangles map to their four corners; ellipses to an inscribed regular
//! 32-gon (configurable). Intersection areas come from Sutherland-Hodgman
//! half-plane clipping plus the shoelace formula, so one kernel serves every
//! category pairing.

use thiserror::Error;

use crate::primitives::RotatedPrimitive;

/// Default vertex count for polygonized ellipses. The inscribed 32-gon covers
/// `sin(pi/16)/(pi/16) ~ 99.36%` of the true ellipse area.
pub const ELLIPSE_SEGMENTS: usize = 32;

/// Intersections with absolute area below this are treated as empty to avoid
/// sign noise from collinear clipping.
const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PolygonError {
    #[error("a non-empty convex polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertices must be counter-clockwise with positive area")]
    NotCounterClockwise,
    #[error("polygon is not convex at vertex {0}")]
    NotConvex(usize),
    #[error("vertex coordinates must be finite")]
    NonFiniteVertex,
}

/// A counter-clockwise convex polygon; possibly empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexPolygon {
    vertices: Vec<[f64; 2]>,
}

impl ConvexPolygon {
    /// Validating constructor: at least three finite vertices, counter-clockwise,
    /// convex (collinear runs allowed).
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, PolygonError> {
        if vertices.len() < 3 {
            return Err(PolygonError::TooFewVertices(vertices.len()));
        }
        if vertices
            .iter()
            .any(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(PolygonError::NonFiniteVertex);
        }
        let scale = vertices
            .iter()
            .flat_map(|v| [v[0].abs(), v[1].abs()])
            .fold(1.0f64, f64::max);
        let tol = -1e-9 * scale * scale;
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if cross < tol {
                return Err(PolygonError::NotConvex((i + 1) % n));
            }
        }
        let poly = Self { vertices };
        if poly.area_signed() <= 0.0 {
            return Err(PolygonError::NotCounterClockwise);
        }
        Ok(poly)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub(crate) fn from_clip(vertices: Vec<[f64; 2]>) -> Self {
        let poly = Self { vertices };
        if poly.vertices.len() < 3 || poly.area_signed().abs() < AREA_EPS {
            Self::empty()
        } else {
            poly
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    fn area_signed(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            acc += x0 * y1 - x1 * y0;
        }
        acc / 2.0
    }

    pub fn aabb(&self) -> Option<Aabb> {
        let first = self.vertices.first()?;
        let mut bb = Aabb {
            min: *first,
            max: *first,
        };
        for v in &self.vertices[1..] {
            bb.min[0] = bb.min[0].min(v[0]);
            bb.min[1] = bb.min[1].min(v[1]);
            bb.max[0] = bb.max[0].max(v[0]);
            bb.max[1] = bb.max[1].max(v[1]);
        }
        Some(bb)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    /// Touching boxes count as intersecting, so the NMS prefilter only skips
    /// pairs that are strictly separated.
    pub fn intersects(&self, other: &Aabb) -> bool {
        self.min[0] <= other.max[0]
            && other.min[0] <= self.max[0]
            && self.min[1] <= other.max[1]
            && other.min[1] <= self.max[1]
    }

    /// Area of the box overlap; zero when disjoint. An upper bound on the
    /// intersection area of the enclosed shapes.
    pub fn intersection_area(&self, other: &Aabb) -> f64 {
        let w = self.max[0].min(other.max[0]) - self.min[0].max(other.min[0]);
        let h = self.max[1].min(other.max[1]) - self.min[1].max(other.min[1]);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

/// Conservative enclosing box of the exact shape (and hence of its inscribed
/// polygonization).
pub fn enclosing_aabb(prim: &RotatedPrimitive) -> Aabb {
    let (sin_t, cos_t) = prim.theta.sin_cos();
    let a = prim.w / 2.0;
    let b = prim.h / 2.0;
    let (hx, hy) = if prim.category.is_elliptic() {
        (
            ((a * cos_t) * (a * cos_t) + (b * sin_t) * (b * sin_t)).sqrt(),
            ((a * sin_t) * (a * sin_t) + (b * cos_t) * (b * cos_t)).sqrt(),
        )
    } else {
        (
            a * cos_t.abs() + b * sin_t.abs(),
            a * sin_t.abs() + b * cos_t.abs(),
        )
    };
    Aabb {
        min: [prim.cx - hx, prim.cy - hy],
        max: [prim.cx + hx, prim.cy + hy],
    }
}

/// Unit-circle samples for the default 32-gon, shared across calls.
fn unit_circle_32() -> &'static [(f64, f64); ELLIPSE_SEGMENTS] {
    static TABLE: std::sync::OnceLock<[(f64, f64); ELLIPSE_SEGMENTS]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        std::array::from_fn(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / ELLIPSE_SEGMENTS as f64;
            (phi.cos(), phi.sin())
        })
    })
}

/// Polygonizes a primitive: exact corners for rectangles and squares, an
/// inscribed `segments`-gon for ellipses and circles. `segments` must be >= 4.
pub fn to_polygon(prim: &RotatedPrimitive, segments: usize) -> ConvexPolygon {
    assert!(segments >= 4, "ellipse polygonization needs >= 4 segments");
    let (sin_t, cos_t) = prim.theta.sin_cos();
    let a = prim.w / 2.0;
    let b = prim.h / 2.0;
    let place = |u: f64, v: f64| -> [f64; 2] {
        [
            prim.cx + u * cos_t - v * sin_t,
            prim.cy + u * sin_t + v * cos_t,
        ]
    };
    let vertices = if prim.category.is_elliptic() {
        if segments == ELLIPSE_SEGMENTS {
            unit_circle_32()
                .iter()
                .map(|&(c, s)| place(a * c, b * s))
                .collect()
        } else {
            (0..segments)
                .map(|k| {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
                    place(a * phi.cos(), b * phi.sin())
                })
                .collect()
        }
    } else {
        vec![place(a, b), place(-a, b), place(-a, -b), place(a, -b)]
    };
    ConvexPolygon { vertices }
}

/// Signed-distance side test: positive on the left of the directed edge.
fn edge_side(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

fn clip_halfplane_into(poly: &[[f64; 2]], a: [f64; 2], b: [f64; 2], out: &mut Vec<[f64; 2]>) {
    out.clear();
    let n = poly.len();
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let sc = edge_side(a[0], a[1], b[0], b[1], s[0], s[1]);
        let ec = edge_side(a[0], a[1], b[0], b[1], e[0], e[1]);
        let s_in = sc >= 0.0;
        let e_in = ec >= 0.0;
        if s_in != e_in {
            let denom = sc - ec;
            if denom.abs() > 1e-300 {
                let t = sc / denom;
                out.push([s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]);
            }
        }
        if e_in {
            out.push(e);
        }
    }
}

/// Runs the half-plane passes in caller-provided buffers; `current` ends up
/// holding the clipped vertex loop (possibly fewer than 3 vertices).
fn clip_with(
    subject: &[[f64; 2]],
    window: &[[f64; 2]],
    current: &mut Vec<[f64; 2]>,
    scratch: &mut Vec<[f64; 2]>,
) {
    current.clear();
    current.extend_from_slice(subject);
    let n = window.len();
    for i in 0..n {
        clip_halfplane_into(current, window[i], window[(i + 1) % n], scratch);
        std::mem::swap(current, scratch);
        if current.len() < 3 {
            current.clear();
            return;
        }
    }
}

fn shoelace(verts: &[[f64; 2]]) -> f64 {
    let n = verts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = verts[i];
        let [x1, y1] = verts[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

/// Intersection area computed in caller-provided workspace buffers; this is
/// the allocation-free core shared by [`clip`] and [`polygon_iou`] so every
/// caller sees bit-identical arithmetic.
pub(crate) fn intersection_area_with(
    subject: &ConvexPolygon,
    window: &ConvexPolygon,
    current: &mut Vec<[f64; 2]>,
    scratch: &mut Vec<[f64; 2]>,
) -> f64 {
    if subject.is_empty() || window.is_empty() {
        return 0.0;
    }
    clip_with(&subject.vertices, &window.vertices, current, scratch);
    let signed = shoelace(current);
    if current.len() < 3 || signed.abs() < AREA_EPS {
        0.0
    } else {
        signed.max(0.0)
    }
}

/// Clips `subject` to the interior of the convex `window`; empty when disjoint.
pub fn clip(subject: &ConvexPolygon, window: &ConvexPolygon) -> ConvexPolygon {
    if subject.is_empty() || window.is_empty() {
        return ConvexPolygon::empty();
    }
    let mut current = Vec::with_capacity(subject.vertices.len() + window.vertices.len());
    let mut scratch = Vec::with_capacity(current.capacity());
    clip_with(&subject.vertices, &window.vertices, &mut current, &mut scratch);
    ConvexPolygon::from_clip(current)
}

/// Shoelace area; zero for the empty polygon.
pub fn area(p: &ConvexPolygon) -> f64 {
    p.area_signed().max(0.0)
}

/// IoU of two pre-polygonized shapes with known areas.
pub fn polygon_iou(pa: &ConvexPolygon, area_a: f64, pb: &ConvexPolygon, area_b: f64) -> f64 {
    let mut current = Vec::with_capacity(pa.vertices.len() + pb.vertices.len());
    let mut scratch = Vec::with_capacity(current.capacity());
    polygon_iou_with(pa, area_a, pb, area_b, &mut current, &mut scratch)
}

/// Workspace-buffer variant of [`polygon_iou`] for hot loops.
pub(crate) fn polygon_iou_with(
    pa: &ConvexPolygon,
    area_a: f64,
    pb: &ConvexPolygon,
    area_b: f64,
    current: &mut Vec<[f64; 2]>,
    scratch: &mut Vec<[f64; 2]>,
) -> f64 {
    let inter = intersection_area_with(pa, pb, current, scratch);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Rotated IoU of two primitives via convex clipping. Symmetric, 1 for
/// geometrically identical shapes, 0 for disjoint ones.
pub fn rotated_iou(a: &RotatedPrimitive, b: &RotatedPrimitive) -> f64 {
    let pa = to_polygon(a, ELLIPSE_SEGMENTS);
    let pb = to_polygon(b, ELLIPSE_SEGMENTS);
    let area_a = area(&pa);
    let area_b = area(&pb);
    polygon_iou(&pa, area_a, &pb, area_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::Category;
    use approx::assert_relative_eq;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_4, PI};

    fn unit_square_at(cx: f64, cy: f64) -> RotatedPrimitive {
        RotatedPrimitive::new(Category::Square, cx, cy, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn unit_square_vertices_ccw() {
        let sq = unit_square_at(0.0, 0.0);
        let poly = to_polygon(&sq, 32);
        assert_eq!(
            poly.vertices(),
            &[[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]]
        );
        assert_relative_eq!(area(&poly), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inscribed_polygon_area_closed_form() {
        let r = 3.0;
        let circle =
            RotatedPrimitive::new(Category::Circle, 0.0, 0.0, 2.0 * r, 2.0 * r, 0.0).unwrap();
        let poly = to_polygon(&circle, 32);
        let expected = 16.0 * r * r * (PI / 16.0).sin();
        assert_relative_eq!(area(&poly), expected, epsilon = 1e-9);
    }

    #[test]
    fn rotated_rectangle_vertices_are_rotated_corners() {
        let theta = 0.7;
        let rect =
            RotatedPrimitive::new(Category::Rectangle, 2.0, -1.0, 4.0, 2.0, theta).unwrap();
        let poly = to_polygon(&rect, 32);
        let (s, c) = theta.sin_cos();
        let expect = |u: f64, v: f64| [2.0 + u * c - v * s, -1.0 + u * s + v * c];
        let corners = [
            expect(2.0, 1.0),
            expect(-2.0, 1.0),
            expect(-2.0, -1.0),
            expect(2.0, -1.0),
        ];
        for (got, want) in poly.vertices().iter().zip(corners.iter()) {
            assert_relative_eq!(got[0], want[0], epsilon = 1e-12);
            assert_relative_eq!(got[1], want[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn clip_against_itself_keeps_area() {
        let rect =
            RotatedPrimitive::new(Category::Rectangle, 1.0, 2.0, 5.0, 3.0, 0.4).unwrap();
        let poly = to_polygon(&rect, 32);
        let clipped = clip(&poly, &poly);
        assert_relative_eq!(area(&clipped), area(&poly), epsilon = 1e-12);
    }

    #[test]
    fn clip_disjoint_is_empty() {
        let a = to_polygon(&unit_square_at(0.0, 0.0), 32);
        let b = to_polygon(&unit_square_at(5.0, 0.0), 32);
        assert!(clip(&a, &b).is_empty());
        assert_eq!(area(&clip(&a, &b)), 0.0);
    }

    #[test]
    fn clip_half_offset_squares() {
        let a = to_polygon(&unit_square_at(0.0, 0.0), 32);
        let b = to_polygon(&unit_square_at(0.5, 0.0), 32);
        assert_relative_eq!(area(&clip(&a, &b)), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn iou_identical_is_one() {
        let rect =
            RotatedPrimitive::new(Category::Rectangle, 3.0, -2.0, 7.0, 2.5, 1.1).unwrap();
        assert_eq!(rotated_iou(&rect, &rect), 1.0);
        let ell = RotatedPrimitive::new(Category::Ellipse, 3.0, -2.0, 7.0, 2.5, 1.1).unwrap();
        assert_eq!(rotated_iou(&ell, &ell), 1.0);
    }

    #[test]
    fn iou_half_offset_squares_is_third() {
        let a = unit_square_at(0.0, 0.0);
        let b = unit_square_at(0.5, 0.0);
        assert_relative_eq!(rotated_iou(&a, &b), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_cocentered_45deg_squares() {
        let a = unit_square_at(0.0, 0.0);
        let b = RotatedPrimitive::new(Category::Square, 0.0, 0.0, 1.0, 1.0, FRAC_PI_4).unwrap();
        let inter = 2.0 * (2.0f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert_relative_eq!(rotated_iou(&a, &b), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn ellipse_polygonization_area_ratio() {
        let ell = RotatedPrimitive::new(Category::Ellipse, 0.0, 0.0, 10.0, 4.0, 0.3).unwrap();
        let ratio = area(&to_polygon(&ell, 32)) / (PI * 5.0 * 2.0);
        assert!((0.993..=1.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn polygon_validation() {
        assert!(matches!(
            ConvexPolygon::new(vec![[0.0, 0.0], [1.0, 0.0]]),
            Err(PolygonError::TooFewVertices(2))
        ));
        // Clockwise square.
        assert!(ConvexPolygon::new(vec![
            [0.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [1.0, 0.0]
        ])
        .is_err());
        // Non-convex chevron.
        assert!(matches!(
            ConvexPolygon::new(vec![[0.0, 0.0], [2.0, 0.0], [1.0, 0.2], [1.0, 2.0]]),
            Err(PolygonError::NotConvex(_))
        ));
        assert!(ConvexPolygon::new(vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [1.0, 1.0],
            [0.0, 1.0]
        ])
        .is_ok());
    }

    fn random_prim(rng: &mut SmallRng) -> RotatedPrimitive {
        let category = Category::ALL[rng.random_range(0..4)];
        let w = rng.random_range(0.5..4.0);
        let h = if category.requires_equal_axes() {
            w
        } else {
            rng.random_range(0.5..4.0)
        };
        RotatedPrimitive::new(
            category,
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            w,
            h,
            rng.random_range(-1.5..1.5),
        )
        .unwrap()
    }

    #[test]
    fn iou_symmetry() {
        let mut rng = SmallRng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_prim(&mut rng);
            let b = random_prim(&mut rng);
            let ab = rotated_iou(&a, &b);
            let ba = rotated_iou(&b, &a);
            assert!((ab - ba).abs() <= 1e-12, "asymmetry {}", (ab - ba).abs());
        }
    }

    #[test]
    fn iou_rigid_invariance() {
        let mut rng = SmallRng::seed_from_u64(4);
        for _ in 0..100 {
            let a = random_prim(&mut rng);
            let b = random_prim(&mut rng);
            let base = rotated_iou(&a, &b);
            let (dx, dy, rot) = (
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-1.5..1.5f64),
            );
            let (sr, cr) = rot.sin_cos();
            let transform = |p: &RotatedPrimitive| {
                RotatedPrimitive::new(
                    p.category,
                    p.cx * cr - p.cy * sr + dx,
                    p.cx * sr + p.cy * cr + dy,
                    p.w,
                    p.h,
                    crate::primitives::normalize_angle(p.theta + rot),
                )
                .unwrap()
            };
            let moved = rotated_iou(&transform(&a), &transform(&b));
            assert!((moved - base).abs() <= 1e-9, "drift {}", (moved - base).abs());
        }
    }

    #[test]
    fn clip_area_bounded_by_inputs() {
        let mut rng = SmallRng::seed_from_u64(5);
        for _ in 0..200 {
            let a = to_polygon(&random_prim(&mut rng), 32);
            let b = to_polygon(&random_prim(&mut rng), 32);
            let inter = area(&clip(&a, &b));
            assert!(inter <= area(&a).min(area(&b)) + 1e-9);
        }
    }

    #[test]
    fn aabb_encloses_polygonization() {
        let mut rng = SmallRng::seed_from_u64(6);
        for _ in 0..200 {
            let p = random_prim(&mut rng);
            let bb = enclosing_aabb(&p);
            for v in to_polygon(&p, 32).vertices() {
                assert!(v[0] >= bb.min[0] - 1e-9 && v[0] <= bb.max[0] + 1e-9);
                assert!(v[1] >= bb.min[1] - 1e-9 && v[1] <= bb.max[1] + 1e-9);
            }
        }
    }
}
