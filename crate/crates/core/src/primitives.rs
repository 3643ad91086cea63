//! Five-parameter rotated primitives and the raw-prediction transforms.
//!
//! A detection target is an ellipse or rectangle described by its center,
//! axis lengths and orientation. The detection head emits per-anchor raw
//! values `(tx, ty, tw, th, ta, tc, class scores)` which [`decode`] maps to a
//! concrete primitive via sigmoid / exponential / arc-tangent transforms;
//! [`encode`] is the exact inverse on its valid domain.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

/// Relative `|w - h| / max(w, h)` tolerance for circles and squares.
pub const EQUAL_AXES_TOL: f64 = 0.05;

/// Clamp on the size exponents so `p * exp(t)` stays finite for any finite input.
const EXP_CLAMP: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum PrimitiveError {
    #[error("width and height must be positive and finite, got w={w}, h={h}")]
    InvalidDimensions { w: f64, h: f64 },
    #[error("center coordinates must be finite")]
    InvalidCenter,
    #[error("{0:?} requires near-equal axes: |w - h| / max(w, h) = {aspect:.4} exceeds {EQUAL_AXES_TOL}", aspect = .1)]
    UnequalAxes(Category, f64),
    #[error("unknown category id {0}")]
    UnknownCategory(u32),
    #[error("grid stride must be positive, got {0}")]
    InvalidStride(f64),
    #[error("anchor dimensions must be positive, got pw={pw}, ph={ph}")]
    InvalidAnchor { pw: f64, ph: f64 },
    #[error("head layout requires S, B >= 1 and 1 <= C <= 4, got S={s}, B={b}, C={c}")]
    InvalidLayout { s: usize, b: usize, c: usize },
    #[error("cell ({col}, {row}) outside a {s}x{s} grid")]
    CellOutOfGrid { col: usize, row: usize, s: usize },
    #[error("raw prediction values must be finite")]
    NonFiniteRaw,
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("center must lie strictly inside the cell: in-cell fraction ({fx:.6}, {fy:.6}) not in (0,1)")]
    CenterOutsideCell { fx: f64, fy: f64 },
    #[error("angular offset to the anchor prior is exactly pi/2; tangent undefined")]
    DegenerateAngleOffset,
    #[error("score must lie strictly inside (0,1), got {0}")]
    ScoreOutOfRange(f64),
    #[error("category id {id} does not fit in a {c}-class head")]
    CategoryOutOfRange { id: u32, c: usize },
}

/// The four supported primitive categories. Circles and squares are the
/// equal-axes special cases of ellipses and rectangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Circle,
    Ellipse,
    Square,
    Rectangle,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Circle,
        Category::Ellipse,
        Category::Square,
        Category::Rectangle,
    ];

    /// Numeric id used in label files and tensor class slots.
    pub fn id(self) -> u32 {
        match self {
            Category::Circle => 0,
            Category::Ellipse => 1,
            Category::Square => 2,
            Category::Rectangle => 3,
        }
    }

    pub fn from_id(id: u32) -> Result<Self, PrimitiveError> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or(PrimitiveError::UnknownCategory(id))
    }

    /// Circles and ellipses polygonize as inscribed n-gons; squares and
    /// rectangles as exact quads.
    pub fn is_elliptic(self) -> bool {
        matches!(self, Category::Circle | Category::Ellipse)
    }

    /// True for categories whose two axes must agree within [`EQUAL_AXES_TOL`].
    pub fn requires_equal_axes(self) -> bool {
        matches!(self, Category::Circle | Category::Square)
    }
}

/// A rotated ellipse or rectangle: center `(cx, cy)` in pixels, full axis
/// lengths `w` and `h` in pixels, orientation `theta` in `(-pi/2, pi/2]`.
///
/// `theta` is the angle between the width / major-axis direction and the
/// positive x axis, counter-clockwise positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedPrimitive {
    pub category: Category,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RotatedPrimitive {
    /// Validating constructor. `theta` is normalized into `(-pi/2, pi/2]`.
    pub fn new(
        category: Category,
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        theta: f64,
    ) -> Result<Self, PrimitiveError> {
        if !w.is_finite() || !h.is_finite() || w <= 0.0 || h <= 0.0 {
            return Err(PrimitiveError::InvalidDimensions { w, h });
        }
        if !cx.is_finite() || !cy.is_finite() || !theta.is_finite() {
            return Err(PrimitiveError::InvalidCenter);
        }
        if category.requires_equal_axes() {
            let aspect = (w - h).abs() / w.max(h);
            if aspect > EQUAL_AXES_TOL {
                return Err(PrimitiveError::UnequalAxes(category, aspect));
            }
        }
        Ok(Self {
            category,
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    /// Exact membership test in the underlying shape (not its polygonization).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (sin_t, cos_t) = self.theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        // Coordinates in the shape frame: u along the width axis.
        let u = dx * cos_t + dy * sin_t;
        let v = -dx * sin_t + dy * cos_t;
        let a = self.w / 2.0;
        let b = self.h / 2.0;
        if self.category.is_elliptic() {
            (u / a) * (u / a) + (v / b) * (v / b) <= 1.0
        } else {
            u.abs() <= a && v.abs() <= b
        }
    }
}

/// Per-anchor raw head outputs before decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub ta: f64,
    pub tc: f64,
    pub category_scores: Vec<f64>,
}

impl RawPrediction {
    pub fn new(
        tx: f64,
        ty: f64,
        tw: f64,
        th: f64,
        ta: f64,
        tc: f64,
        category_scores: Vec<f64>,
    ) -> Result<Self, PrimitiveError> {
        let finite = [tx, ty, tw, th, ta, tc].iter().all(|v| v.is_finite())
            && category_scores.iter().all(|v| v.is_finite());
        if !finite {
            return Err(PrimitiveError::NonFiniteRaw);
        }
        Ok(Self {
            tx,
            ty,
            tw,
            th,
            ta,
            tc,
            category_scores,
        })
    }

    /// Argmax category (ties break to the lowest id) and its softmax probability.
    pub fn best_category(&self) -> (Category, f64) {
        let mut best = 0usize;
        for (i, &s) in self.category_scores.iter().enumerate() {
            if s > self.category_scores[best] {
                best = i;
            }
        }
        let max = self.category_scores[best];
        let sum_exp: f64 = self.category_scores.iter().map(|&s| (s - max).exp()).sum();
        let category = Category::from_id(best as u32).expect("head layout limits C to 4");
        (category, 1.0 / sum_exp)
    }
}

/// One feature-map cell: integer grid position plus pixels-per-cell stride.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub col: usize,
    pub row: usize,
    pub stride: f64,
}

impl GridCell {
    pub fn new(col: usize, row: usize, stride: f64) -> Result<Self, PrimitiveError> {
        if !stride.is_finite() || stride <= 0.0 {
            return Err(PrimitiveError::InvalidStride(stride));
        }
        Ok(Self { col, row, stride })
    }
}

/// A prior anchor: template dimensions in pixels plus an orientation prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub pw: f64,
    pub ph: f64,
    pub theta_prior: f64,
}

impl Anchor {
    pub fn new(pw: f64, ph: f64, theta_prior: f64) -> Result<Self, PrimitiveError> {
        if !pw.is_finite() || !ph.is_finite() || pw <= 0.0 || ph <= 0.0 {
            return Err(PrimitiveError::InvalidAnchor { pw, ph });
        }
        if !theta_prior.is_finite() {
            return Err(PrimitiveError::InvalidCenter);
        }
        Ok(Self {
            pw,
            ph,
            theta_prior: normalize_angle(theta_prior),
        })
    }
}

/// Detection-head geometry: `s`x`s` grid cells, `b` anchors per cell,
/// `c` categories, `stride` pixels per cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLayout {
    pub s: usize,
    pub b: usize,
    pub c: usize,
    pub stride: f64,
}

impl HeadLayout {
    pub fn new(s: usize, b: usize, c: usize, stride: f64) -> Result<Self, PrimitiveError> {
        if s < 1 || b < 1 || !(1..=Category::ALL.len()).contains(&c) {
            return Err(PrimitiveError::InvalidLayout { s, b, c });
        }
        if !stride.is_finite() || stride <= 0.0 {
            return Err(PrimitiveError::InvalidStride(stride));
        }
        Ok(Self { s, b, c, stride })
    }

    pub fn cell(&self, col: usize, row: usize) -> Result<GridCell, PrimitiveError> {
        if col >= self.s || row >= self.s {
            return Err(PrimitiveError::CellOutOfGrid {
                col,
                row,
                s: self.s,
            });
        }
        GridCell::new(col, row, self.stride)
    }

    /// Image side length in pixels.
    pub fn image_side(&self) -> f64 {
        self.s as f64 * self.stride
    }

    pub fn num_slots(&self) -> usize {
        self.s * self.s * self.b
    }

    /// Linear slot index in `[row][col][anchor]` order.
    pub fn slot(&self, row: usize, col: usize, anchor: usize) -> usize {
        debug_assert!(row < self.s && col < self.s && anchor < self.b);
        (row * self.s + col) * self.b + anchor
    }

    /// Inverse of [`HeadLayout::slot`].
    pub fn slot_position(&self, slot: usize) -> (usize, usize, usize) {
        let anchor = slot % self.b;
        let cell = slot / self.b;
        (cell / self.s, cell % self.s, anchor)
    }

    /// Raw values per anchor slot: the six box terms plus one score per category.
    pub fn values_per_slot(&self) -> usize {
        6 + self.c
    }
}

/// Wraps any finite angle into `(-pi/2, pi/2]`, the canonical range of an
/// undirected axis; `-pi/2` maps up to `pi/2`.
///
/// Rejects non-finite input.
pub fn normalize_angle(theta: f64) -> f64 {
    assert!(theta.is_finite(), "angle must be finite, got {theta}");
    let r = theta.rem_euclid(PI);
    // rem_euclid may round up to exactly PI for tiny negative inputs.
    if r > FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] on (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Decodes raw head outputs into a primitive and its combined score.
///
/// Center: `(sigmoid(t) + cell index) * stride` pixels. Sizes: anchor dims
/// scaled by `exp(t)`. Orientation: `atan(ta)` added to the anchor prior and
/// re-normalized. Score: `sigmoid(tc)` times the best softmax class
/// probability. When the winning category requires equal axes but the decoded
/// sizes disagree beyond tolerance, both axes snap to their geometric mean so
/// every finite raw input yields a valid primitive.
pub fn decode(raw: &RawPrediction, cell: &GridCell, anchor: &Anchor) -> (RotatedPrimitive, f64) {
    let cx = (sigmoid(raw.tx) + cell.col as f64) * cell.stride;
    let cy = (sigmoid(raw.ty) + cell.row as f64) * cell.stride;
    let mut w = anchor.pw * raw.tw.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
    let mut h = anchor.ph * raw.th.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
    let theta = normalize_angle(anchor.theta_prior + raw.ta.atan());
    let (category, class_prob) = raw.best_category();
    let score = sigmoid(raw.tc) * class_prob;
    if category.requires_equal_axes() && (w - h).abs() / w.max(h) > EQUAL_AXES_TOL {
        let side = (w * h).sqrt();
        w = side;
        h = side;
    }
    let primitive = RotatedPrimitive::new(category, cx, cy, w, h, theta)
        .expect("decode output always satisfies primitive invariants");
    (primitive, score)
}

/// Exact inverse of [`decode`] on its valid domain.
///
/// Requires the primitive center strictly inside `cell`, an angular offset to
/// the anchor prior strictly inside `(-pi/2, pi/2)` and a score strictly
/// inside `(0, 1)`. `num_categories` sets the class-score vector length; the
/// target category gets a large margin (zero for a single-class head) so the
/// decoded class probability is 1 to machine precision.
pub fn encode(
    prim: &RotatedPrimitive,
    cell: &GridCell,
    anchor: &Anchor,
    score: f64,
    num_categories: usize,
) -> Result<RawPrediction, EncodeError> {
    let fx = prim.cx / cell.stride - cell.col as f64;
    let fy = prim.cy / cell.stride - cell.row as f64;
    if !(fx > 0.0 && fx < 1.0 && fy > 0.0 && fy < 1.0) {
        return Err(EncodeError::CenterOutsideCell { fx, fy });
    }
    let offset = normalize_angle(prim.theta - anchor.theta_prior);
    if offset >= FRAC_PI_2 {
        return Err(EncodeError::DegenerateAngleOffset);
    }
    if !(score > 0.0 && score < 1.0) {
        return Err(EncodeError::ScoreOutOfRange(score));
    }
    let id = prim.category.id();
    if id as usize >= num_categories {
        return Err(EncodeError::CategoryOutOfRange {
            id,
            c: num_categories,
        });
    }
    let mut category_scores = vec![0.0; num_categories];
    if num_categories > 1 {
        // Margin large enough that the softmax maximum rounds to exactly 1.0.
        category_scores[id as usize] = 40.0;
    }
    Ok(RawPrediction {
        tx: logit(fx),
        ty: logit(fy),
        tw: (prim.w / anchor.pw).ln(),
        th: (prim.h / anchor.ph).ln(),
        ta: offset.tan(),
        tc: logit(score),
        category_scores,
    })
}
