//! Rotated non-maximum suppression.
//!
//! Greedy score-descending selection over rotated IoU. An axis-aligned
//! bounding-box prefilter skips exact polygon clipping whenever the enclosing
//! boxes are strictly separated; disabling it never changes the output, only
//! the runtime.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::overlap::{self, Aabb, ConvexPolygon};
use crate::primitives::{Category, RotatedPrimitive};

#[derive(Debug, Error)]
pub enum DetectionIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

/// A decoded detection with its combined score and a stable identity for
/// deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub primitive: RotatedPrimitive,
    pub score: f64,
    pub source_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub iou_threshold: f64,
    /// When true, only detections of the same category suppress each other.
    pub class_aware: bool,
    pub prefilter: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            class_aware: true,
            prefilter: true,
        }
    }
}

struct Candidate {
    polygon: ConvexPolygon,
    area: f64,
    aabb: Aabb,
    category: Category,
}

/// Uniform-grid index over kept detections. Retrieval is a superset of the
/// AABB-intersecting pairs (each entry hits the exact AABB test afterwards),
/// so the grid only accelerates the prefilter; it never changes which pairs
/// reach exact clipping.
struct PrefilterGrid {
    min: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl PrefilterGrid {
    /// Declines degenerate inputs and layouts that would need an oversized
    /// bucket table; callers then fall back to a linear kept scan.
    fn build(aabbs: &[Aabb]) -> Option<Self> {
        let first = aabbs.first()?;
        let mut min = first.min;
        let mut max = first.max;
        let mut cell = 0.0f64;
        for bb in aabbs {
            min[0] = min[0].min(bb.min[0]);
            min[1] = min[1].min(bb.min[1]);
            max[0] = max[0].max(bb.max[0]);
            max[1] = max[1].max(bb.max[1]);
            cell = cell.max(bb.max[0] - bb.min[0]).max(bb.max[1] - bb.min[1]);
        }
        if !cell.is_finite() || cell <= 0.0 {
            return None;
        }
        // Bound the table size in the float domain first: spread-out inputs
        // could otherwise saturate the usize conversion.
        let span_cols = (max[0] - min[0]) / cell;
        let span_rows = (max[1] - min[1]) / cell;
        let limit = (1u32 << 22) as f64;
        if !span_cols.is_finite()
            || !span_rows.is_finite()
            || span_cols >= limit
            || span_rows >= limit
        {
            return None;
        }
        let cols = span_cols as usize + 1;
        let rows = span_rows as usize + 1;
        if cols.saturating_mul(rows) > (1 << 22) {
            return None;
        }
        Some(Self {
            min,
            cell,
            cols,
            rows,
            buckets: vec![Vec::new(); cols * rows],
        })
    }

    fn cell_range(&self, bb: &Aabb) -> (usize, usize, usize, usize) {
        let clampi = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
        (
            clampi((bb.min[0] - self.min[0]) / self.cell, self.cols),
            clampi((bb.max[0] - self.min[0]) / self.cell, self.cols),
            clampi((bb.min[1] - self.min[1]) / self.cell, self.rows),
            clampi((bb.max[1] - self.min[1]) / self.cell, self.rows),
        )
    }

    fn insert(&mut self, id: u32, bb: &Aabb) {
        let (c0, c1, r0, r1) = self.cell_range(bb);
        for r in r0..=r1 {
            for c in c0..=c1 {
                self.buckets[r * self.cols + c].push(id);
            }
        }
    }
}

/// Greedy rotated NMS. Detections are visited in descending score order
/// (ties: lower `source_index` first); a candidate is suppressed iff its
/// rotated IoU with an already-kept detection exceeds `iou_threshold`
/// (same-category only when `class_aware`). Output keeps that order.
pub fn rnms(detections: &[ScoredDetection], config: &NmsConfig) -> Vec<ScoredDetection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .score
            .total_cmp(&detections[i].score)
            .then(detections[i].source_index.cmp(&detections[j].source_index))
    });

    let candidates: Vec<Candidate> = detections
        .iter()
        .map(|d| {
            let polygon = overlap::to_polygon(&d.primitive, overlap::ELLIPSE_SEGMENTS);
            let area = overlap::area(&polygon);
            Candidate {
                polygon,
                area,
                aabb: overlap::enclosing_aabb(&d.primitive),
                category: d.primitive.category,
            }
        })
        .collect();

    let mut grid = if config.prefilter {
        PrefilterGrid::build(&candidates.iter().map(|c| c.aabb).collect::<Vec<_>>())
    } else {
        None
    };
    // Per-round visit stamps deduplicate grid hits across buckets.
    let mut stamps = vec![0u32; candidates.len()];
    let mut round = 0u32;
    let mut buf_a: Vec<[f64; 2]> = Vec::new();
    let mut buf_b: Vec<[f64; 2]> = Vec::new();

    let mut kept_idx: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = match &grid {
            Some(g) => {
                round += 1;
                let (c0, c1, r0, r1) = g.cell_range(&candidates[i].aabb);
                let mut hit = false;
                'cells: for r in r0..=r1 {
                    for c in c0..=c1 {
                        for &k in &g.buckets[r * g.cols + c] {
                            let k = k as usize;
                            if stamps[k] == round {
                                continue;
                            }
                            stamps[k] = round;
                            if pair_suppresses(&candidates, k, i, config, &mut buf_a, &mut buf_b)
                            {
                                hit = true;
                                break 'cells;
                            }
                        }
                    }
                }
                hit
            }
            None => kept_idx
                .iter()
                .any(|&k| pair_suppresses(&candidates, k, i, config, &mut buf_a, &mut buf_b)),
        };
        if !suppressed {
            if let Some(g) = grid.as_mut() {
                g.insert(i as u32, &candidates[i].aabb);
            }
            kept_idx.push(i);
        }
    }
    kept_idx.iter().map(|&i| detections[i].clone()).collect()
}

fn pair_suppresses(
    candidates: &[Candidate],
    kept: usize,
    probe: usize,
    config: &NmsConfig,
    buf_a: &mut Vec<[f64; 2]>,
    buf_b: &mut Vec<[f64; 2]>,
) -> bool {
    let ck = &candidates[kept];
    let ci = &candidates[probe];
    if config.class_aware && ck.category != ci.category {
        return false;
    }
    if config.prefilter {
        // Sound skip: the enclosing-box overlap caps the shape intersection,
        // so a pair whose IoU upper bound cannot exceed the threshold never
        // reaches exact clipping. Disjoint boxes fall out as cap = 0.
        let cap = ck
            .aabb
            .intersection_area(&ci.aabb)
            .min(ck.area)
            .min(ci.area);
        if cap / (ck.area + ci.area - cap) <= config.iou_threshold {
            return false;
        }
    }
    overlap::polygon_iou_with(&ck.polygon, ck.area, &ci.polygon, ci.area, buf_a, buf_b)
        > config.iou_threshold
}

/// Writes detections as `category_id cx cy w h theta score`, one per line.
pub fn write_detections(
    detections: &[ScoredDetection],
    path: impl AsRef<Path>,
) -> Result<(), DetectionIoError> {
    let path = path.as_ref();
    let wrap = |source| DetectionIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut out = BufWriter::new(file);
    for d in detections {
        let p = &d.primitive;
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            p.category.id(),
            p.cx,
            p.cy,
            p.w,
            p.h,
            p.theta,
            d.score
        )
        .map_err(wrap)?;
    }
    out.flush().map_err(wrap)
}

/// Inverse of [`write_detections`]; `#`-prefixed and blank lines are ignored.
/// `source_index` is assigned from the detection's position in the file.
pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<ScoredDetection>, DetectionIoError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DetectionIoError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DetectionIoError::Io {
            path: display.clone(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse = |msg: String| DetectionIoError::Parse {
            path: display.clone(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(parse(format!(
                "expected 7 fields `category_id cx cy w h theta score`, got {}",
                fields.len()
            )));
        }
        let id: u32 = fields[0]
            .parse()
            .map_err(|e| parse(format!("category_id: {e}")))?;
        let mut nums = [0.0f64; 6];
        for (k, f) in fields[1..].iter().enumerate() {
            nums[k] = f
                .parse()
                .map_err(|e| parse(format!("field {}: {e}", k + 2)))?;
        }
        let category = Category::from_id(id).map_err(|e| parse(e.to_string()))?;
        let primitive =
            RotatedPrimitive::new(category, nums[0], nums[1], nums[2], nums[3], nums[4])
                .map_err(|e| parse(e.to_string()))?;
        let score = nums[5];
        if !(0.0..=1.0).contains(&score) {
            return Err(parse(format!("score {score} outside [0,1]")));
        }
        out.push(ScoredDetection {
            primitive,
            score,
            source_index: out.len(),
        });
    }
    Ok(out)
}
