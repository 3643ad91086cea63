//! Prior-anchor construction and ground-truth assignment.
//!
//! Label dimensions are clustered with k-means under a `1 - IoU` distance
//! (boxes compared co-centered and axis-aligned), then crossed with evenly
//! spaced orientation priors to form the rotated anchor lattice. Each ground
//! truth is assigned to the cell containing its center and, within it, to the
//! anchor of maximal rotated IoU.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::overlap::rotated_iou;
use crate::primitives::{Anchor, Category, HeadLayout, PrimitiveError, RotatedPrimitive};

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("label set is empty")]
    EmptyLabels,
    #[error("K={k} exceeds the {distinct} distinct (w, h) pairs in the label set")]
    TooManyClusters { k: usize, distinct: usize },
    #[error("cluster config invalid: {0}")]
    InvalidConfig(&'static str),
    #[error("ground truth {index} center ({cx}, {cy}) outside the {side}x{side} image")]
    CenterOutsideImage {
        index: usize,
        cx: f64,
        cy: f64,
        side: f64,
    },
    #[error("cell ({col}, {row}) has no free anchor slot left for ground truth {gt}")]
    SlotExhausted { col: usize, row: usize, gt: usize },
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
    #[error(transparent)]
    Primitive(#[from] PrimitiveError),
}

/// K-means configuration for dimension clustering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on centroid movement in pixels.
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 6,
            seed: 0,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Clustering result: centroids sorted by area, plus the per-iteration
/// objective (mean `1 - IoU` to the assigned centroid).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub centroids: Vec<(f64, f64)>,
    pub objective_trace: Vec<f64>,
}

/// IoU of two boxes placed co-centered and axis-aligned.
fn aligned_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    let union = a.0 * a.1 + b.0 * b.1 - inter;
    inter / union
}

fn dim_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    1.0 - aligned_iou(a, b)
}

/// K-means over label `(w, h)` pairs.
///
/// Seeding is farthest-point over the sorted distinct dimension set (first
/// pick drawn from the seed), so the outcome is deterministic per seed and
/// invariant under label permutation up to floating-point roundoff. The
/// update step keeps a cluster's previous centroid whenever the candidate
/// mean would not lower that cluster's summed distance, which makes the
/// objective trace non-increasing.
pub fn cluster_dims(
    labels: &[RotatedPrimitive],
    config: &ClusterConfig,
) -> Result<ClusterOutcome, AnchorError> {
    if labels.is_empty() {
        return Err(AnchorError::EmptyLabels);
    }
    if config.k < 1 {
        return Err(AnchorError::InvalidConfig("K must be >= 1"));
    }
    if config.max_iter < 1 {
        return Err(AnchorError::InvalidConfig("max_iter must be >= 1"));
    }
    if config.tol.is_nan() || config.tol <= 0.0 {
        return Err(AnchorError::InvalidConfig("tol must be > 0"));
    }
    let dims: Vec<(f64, f64)> = labels.iter().map(|l| (l.w, l.h)).collect();

    let mut distinct = dims.clone();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    if config.k > distinct.len() {
        return Err(AnchorError::TooManyClusters {
            k: config.k,
            distinct: distinct.len(),
        });
    }

    // Farthest-point seeding over the canonical (sorted) distinct set.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = vec![distinct[rng.random_range(0..distinct.len())]];
    while centroids.len() < config.k {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &d) in distinct.iter().enumerate() {
            let near = centroids
                .iter()
                .map(|&c| dim_distance(d, c))
                .fold(f64::INFINITY, f64::min);
            if near > best.1 {
                best = (i, near);
            }
        }
        centroids.push(distinct[best.0]);
    }

    let mut assignment = vec![0usize; dims.len()];
    let mut trace = Vec::new();
    for _ in 0..config.max_iter {
        // Assignment step; ties break to the lower cluster index.
        let mut objective = 0.0;
        for (i, &d) in dims.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (k, &c) in centroids.iter().enumerate() {
                let dist = dim_distance(d, c);
                if dist < best.1 {
                    best = (k, dist);
                }
            }
            assignment[i] = best.0;
            objective += best.1;
        }
        trace.push(objective / dims.len() as f64);

        // Guarded mean update.
        let mut movement = 0.0f64;
        for (k, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = dims
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == k)
                .map(|(&d, _)| d)
                .collect();
            if members.is_empty() {
                continue;
            }
            let n = members.len() as f64;
            let mean = (
                members.iter().map(|m| m.0).sum::<f64>() / n,
                members.iter().map(|m| m.1).sum::<f64>() / n,
            );
            let old_sum: f64 = members.iter().map(|&m| dim_distance(m, *centroid)).sum();
            let new_sum: f64 = members.iter().map(|&m| dim_distance(m, mean)).sum();
            if new_sum <= old_sum {
                movement = movement
                    .max(((mean.0 - centroid.0).powi(2) + (mean.1 - centroid.1).powi(2)).sqrt());
                *centroid = mean;
            }
        }
        if movement < config.tol {
            break;
        }
    }

    centroids.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)).then(a.0.total_cmp(&b.0)));
    Ok(ClusterOutcome {
        centroids,
        objective_trace: trace,
    })
}

/// The rotated prior-anchor lattice shared by every grid cell, ordered
/// dimension-major, angle-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn new(anchors: Vec<Anchor>) -> Self {
        assert!(!anchors.is_empty(), "anchor set must be non-empty");
        Self { anchors }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, index: usize) -> &Anchor {
        &self.anchors[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.iter()
    }

    /// Writes `pw ph theta_prior` lines behind a header comment recording the
    /// construction parameters.
    pub fn write_file(
        &self,
        path: impl AsRef<Path>,
        meta: &AnchorFileMeta,
    ) -> Result<(), AnchorError> {
        let path = path.as_ref();
        let wrap = |source| AnchorError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(wrap)?;
        let mut out = BufWriter::new(file);
        writeln!(
            out,
            "# k={} angle_count={} seed={}",
            meta.k, meta.angle_count, meta.seed
        )
        .map_err(wrap)?;
        for a in &self.anchors {
            writeln!(out, "{} {} {}", a.pw, a.ph, a.theta_prior).map_err(wrap)?;
        }
        out.flush().map_err(wrap)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, AnchorError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| AnchorError::Io {
            path: display.clone(),
            source,
        })?;
        let reader = std::io::BufReader::new(file);
        let mut anchors = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| AnchorError::Io {
                path: display.clone(),
                source,
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse = |msg: String| AnchorError::Parse {
                path: display.clone(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse(format!(
                    "expected 3 fields `pw ph theta_prior`, got {}",
                    fields.len()
                )));
            }
            let mut nums = [0.0f64; 3];
            for (k, f) in fields.iter().enumerate() {
                nums[k] = f
                    .parse()
                    .map_err(|e| parse(format!("field {}: {e}", k + 1)))?;
            }
            anchors.push(Anchor::new(nums[0], nums[1], nums[2]).map_err(|e| parse(e.to_string()))?);
        }
        if anchors.is_empty() {
            return Err(AnchorError::Parse {
                path: display,
                line: 0,
                msg: "no anchors in file".into(),
            });
        }
        Ok(Self { anchors })
    }
}

/// Header metadata persisted with an anchor file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorFileMeta {
    pub k: usize,
    pub angle_count: usize,
    pub seed: u64,
}

/// Crosses dimension centroids with `angle_count` evenly spaced orientation
/// priors `theta_k = -pi/2 + pi (k + 0.5) / angle_count`, which keeps every
/// prior strictly inside `(-pi/2, pi/2)` and off the wrap boundary.
pub fn build_rotated_anchors(centroids: &[(f64, f64)], angle_count: usize) -> AnchorSet {
    assert!(!centroids.is_empty(), "centroid list must be non-empty");
    assert!(angle_count >= 1, "angle_count must be >= 1");
    let mut anchors = Vec::with_capacity(centroids.len() * angle_count);
    for &(pw, ph) in centroids {
        for k in 0..angle_count {
            let theta = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * (k as f64 + 0.5) / angle_count as f64;
            anchors.push(Anchor::new(pw, ph, theta).expect("centroids are positive"));
        }
    }
    AnchorSet::new(anchors)
}

/// Responsibility masks over the `S*S*B` anchor slots: each ground truth owns
/// exactly one slot; every other slot is a no-object slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    layout: HeadLayout,
    slots: Vec<Option<usize>>,
}

impl Assignment {
    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Ground-truth index owning this slot, if any.
    pub fn matched_gt(&self, slot: usize) -> Option<usize> {
        self.slots[slot]
    }

    pub fn is_obj(&self, slot: usize) -> bool {
        self.slots[slot].is_some()
    }

    pub fn is_noobj(&self, slot: usize) -> bool {
        self.slots[slot].is_none()
    }

    pub fn obj_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Iterates `(slot, gt_index)` pairs for all responsible slots.
    pub fn responsible(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(slot, gt)| gt.map(|g| (slot, g)))
    }
}

/// Template primitive for an anchor centered in a given cell; anchors compare
/// as rectangles.
fn anchor_primitive(anchor: &Anchor, col: usize, row: usize, stride: f64) -> RotatedPrimitive {
    RotatedPrimitive::new(
        Category::Rectangle,
        (col as f64 + 0.5) * stride,
        (row as f64 + 0.5) * stride,
        anchor.pw,
        anchor.ph,
        anchor.theta_prior,
    )
    .expect("anchor dimensions are positive")
}

/// Assigns each ground truth to the cell containing its center and the
/// highest-IoU anchor in it. When two ground truths claim the same slot the
/// later one falls back to its next-best free anchor in the same cell (logged
/// as a warning).
pub fn assign_targets(
    gts: &[RotatedPrimitive],
    anchors: &AnchorSet,
    layout: &HeadLayout,
) -> Result<Assignment, AnchorError> {
    let side = layout.image_side();
    let mut slots = vec![None; layout.num_slots()];
    for (gt_index, gt) in gts.iter().enumerate() {
        if !(gt.cx >= 0.0 && gt.cx < side && gt.cy >= 0.0 && gt.cy < side) {
            return Err(AnchorError::CenterOutsideImage {
                index: gt_index,
                cx: gt.cx,
                cy: gt.cy,
                side,
            });
        }
        let col = (gt.cx / layout.stride) as usize;
        let row = (gt.cy / layout.stride) as usize;
        let mut ranked: Vec<(usize, f64)> = (0..anchors.len())
            .map(|b| {
                let prim = anchor_primitive(anchors.get(b), col, row, layout.stride);
                (b, rotated_iou(gt, &prim))
            })
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut placed = false;
        for (rank, &(b, _)) in ranked.iter().enumerate() {
            let slot = layout.slot(row, col, b);
            if slots[slot].is_none() {
                if rank > 0 {
                    log::warn!(
                        "ground truth {gt_index} fell back to anchor rank {rank} in cell ({col}, {row})"
                    );
                }
                slots[slot] = Some(gt_index);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(AnchorError::SlotExhausted {
                col,
                row,
                gt: gt_index,
            });
        }
    }
    Ok(Assignment {
        layout: *layout,
        slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn label(w: f64, h: f64) -> RotatedPrimitive {
        RotatedPrimitive::new(Category::Rectangle, 50.0, 50.0, w, h, 0.0).unwrap()
    }

    #[test]
    fn identical_labels_fixed_point() {
        let labels = vec![label(20.0, 10.0); 25];
        let outcome = cluster_dims(&labels, &ClusterConfig { k: 1, ..Default::default() }).unwrap();
        assert_eq!(outcome.centroids, vec![(20.0, 10.0)]);
        assert_relative_eq!(outcome.objective_trace[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn recovers_two_synthetic_clusters() {
        let mut rng = SmallRng::seed_from_u64(31);
        let mut labels = Vec::new();
        for _ in 0..300 {
            labels.push(label(
                20.0 * (1.0 + rng.random_range(-0.05..0.05)),
                10.0 * (1.0 + rng.random_range(-0.05..0.05)),
            ));
            labels.push(label(
                80.0 * (1.0 + rng.random_range(-0.05..0.05)),
                40.0 * (1.0 + rng.random_range(-0.05..0.05)),
            ));
        }
        let config = ClusterConfig { k: 2, seed: 3, ..Default::default() };
        let outcome = cluster_dims(&labels, &config).unwrap();
        let expect = [(20.0, 10.0), (80.0, 40.0)];
        for (got, want) in outcome.centroids.iter().zip(expect.iter()) {
            assert!((got.0 - want.0).abs() / want.0 <= 0.02, "{got:?} vs {want:?}");
            assert!((got.1 - want.1).abs() / want.1 <= 0.02, "{got:?} vs {want:?}");
        }
        // Deterministic per seed.
        assert_eq!(cluster_dims(&labels, &config).unwrap(), outcome);
        // Objective never increases.
        for pair in outcome.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0], "objective rose: {pair:?}");
        }
    }

    #[test]
    fn permutation_invariant_up_to_roundoff() {
        let mut rng = SmallRng::seed_from_u64(32);
        let labels: Vec<_> = (0..120)
            .map(|_| label(rng.random_range(10.0..100.0), rng.random_range(10.0..100.0)))
            .collect();
        let config = ClusterConfig { k: 3, seed: 7, ..Default::default() };
        let a = cluster_dims(&labels, &config).unwrap();
        let mut reversed = labels.clone();
        reversed.reverse();
        let b = cluster_dims(&reversed, &config).unwrap();
        for (ca, cb) in a.centroids.iter().zip(b.centroids.iter()) {
            assert_relative_eq!(ca.0, cb.0, max_relative = 1e-9);
            assert_relative_eq!(ca.1, cb.1, max_relative = 1e-9);
        }
    }

    #[test]
    fn k_exceeding_distinct_dims_errors() {
        let labels = vec![label(20.0, 10.0), label(20.0, 10.0), label(30.0, 15.0)];
        let err = cluster_dims(&labels, &ClusterConfig { k: 3, ..Default::default() });
        assert!(matches!(
            err,
            Err(AnchorError::TooManyClusters { k: 3, distinct: 2 })
        ));
        assert!(matches!(
            cluster_dims(&[], &ClusterConfig::default()),
            Err(AnchorError::EmptyLabels)
        ));
    }

    #[test]
    fn anchor_priors_evenly_spaced() {
        let set = build_rotated_anchors(&[(20.0, 10.0)], 1);
        assert_eq!(set.len(), 1);
        assert_relative_eq!(set.get(0).theta_prior, 0.0, epsilon = 1e-12);

        let set = build_rotated_anchors(&[(20.0, 10.0)], 4);
        let want = [-3.0 * PI / 8.0, -PI / 8.0, PI / 8.0, 3.0 * PI / 8.0];
        for (a, w) in set.iter().zip(want.iter()) {
            assert_relative_eq!(a.theta_prior, *w, epsilon = 1e-12);
        }

        let set = build_rotated_anchors(&[(20.0, 10.0), (40.0, 20.0), (60.0, 30.0)], 6);
        assert_eq!(set.len(), 18);
        // Dimension-major order: first six share the first centroid.
        assert!(set.iter().take(6).all(|a| a.pw == 20.0));
        for a in set.iter() {
            assert!(a.theta_prior > -PI / 2.0 && a.theta_prior < PI / 2.0);
        }
        for pair in set.iter().take(6).collect::<Vec<_>>().windows(2) {
            assert_relative_eq!(
                pair[1].theta_prior - pair[0].theta_prior,
                PI / 6.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn exact_anchor_match_is_responsible() {
        let layout = HeadLayout::new(4, 2, 4, 16.0).unwrap();
        let anchors = AnchorSet::new(vec![
            Anchor::new(20.0, 10.0, 0.0).unwrap(),
            Anchor::new(40.0, 40.0, 0.0).unwrap(),
        ]);
        // Ground truth exactly matching anchor 0 at the center of cell (1, 2).
        let gt =
            RotatedPrimitive::new(Category::Rectangle, 24.0, 40.0, 20.0, 10.0, 0.0).unwrap();
        let assignment = assign_targets(&[gt], &anchors, &layout).unwrap();
        assert_eq!(assignment.obj_count(), 1);
        assert_eq!(assignment.matched_gt(layout.slot(2, 1, 0)), Some(0));
    }

    #[test]
    fn zero_gts_all_noobj() {
        let layout = HeadLayout::new(3, 2, 4, 16.0).unwrap();
        let anchors = AnchorSet::new(vec![Anchor::new(20.0, 10.0, 0.0).unwrap()]);
        let assignment = assign_targets(&[], &anchors, &layout).unwrap();
        assert_eq!(assignment.obj_count(), 0);
        assert!((0..assignment.num_slots()).all(|s| assignment.is_noobj(s)));
    }

    #[test]
    fn assignment_matches_exhaustive_argmax() {
        let layout = HeadLayout::new(6, 12, 4, 16.0).unwrap();
        let centroids = [(12.0, 8.0), (30.0, 18.0), (52.0, 40.0)];
        let anchors = build_rotated_anchors(&centroids, 4);
        let mut rng = SmallRng::seed_from_u64(33);
        for _ in 0..40 {
            let gt = RotatedPrimitive::new(
                Category::Ellipse,
                rng.random_range(1.0..95.0),
                rng.random_range(1.0..95.0),
                rng.random_range(8.0..50.0),
                rng.random_range(8.0..50.0),
                rng.random_range(-1.5..1.5),
            )
            .unwrap();
            let assignment = assign_targets(&[gt], &anchors, &layout).unwrap();
            let (slot, _) = assignment.responsible().next().unwrap();
            let (row, col, b) = layout.slot_position(slot);
            assert_eq!(col, (gt.cx / 16.0) as usize);
            assert_eq!(row, (gt.cy / 16.0) as usize);
            // Exhaustive check over all anchors in the cell.
            let best = (0..anchors.len())
                .map(|i| {
                    let prim = anchor_primitive(anchors.get(i), col, row, 16.0);
                    (i, rotated_iou(&gt, &prim))
                })
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .unwrap();
            assert_eq!(b, best.0);
        }
    }

    #[test]
    fn slot_collision_falls_back_to_next_best() {
        let layout = HeadLayout::new(2, 2, 4, 32.0).unwrap();
        let anchors = AnchorSet::new(vec![
            Anchor::new(20.0, 10.0, 0.0).unwrap(),
            Anchor::new(60.0, 30.0, 0.0).unwrap(),
        ]);
        // Both ground truths in cell (0, 0) prefer anchor 0.
        let a = RotatedPrimitive::new(Category::Rectangle, 10.0, 10.0, 20.0, 10.0, 0.0).unwrap();
        let b = RotatedPrimitive::new(Category::Rectangle, 20.0, 20.0, 20.0, 10.0, 0.0).unwrap();
        let assignment = assign_targets(&[a, b], &anchors, &layout).unwrap();
        assert_eq!(assignment.obj_count(), 2);
        assert_eq!(assignment.matched_gt(layout.slot(0, 0, 0)), Some(0));
        assert_eq!(assignment.matched_gt(layout.slot(0, 0, 1)), Some(1));
        // A third claimant exhausts the cell.
        let c = RotatedPrimitive::new(Category::Rectangle, 15.0, 15.0, 20.0, 10.0, 0.0).unwrap();
        assert!(matches!(
            assign_targets(&[a, b, c], &anchors, &layout),
            Err(AnchorError::SlotExhausted { col: 0, row: 0, gt: 2 })
        ));
    }

    #[test]
    fn center_outside_image_rejected() {
        let layout = HeadLayout::new(2, 1, 4, 32.0).unwrap();
        let anchors = AnchorSet::new(vec![Anchor::new(20.0, 10.0, 0.0).unwrap()]);
        let gt =
            RotatedPrimitive::new(Category::Rectangle, 64.0, 10.0, 20.0, 10.0, 0.0).unwrap();
        assert!(matches!(
            assign_targets(&[gt], &anchors, &layout),
            Err(AnchorError::CenterOutsideImage { index: 0, .. })
        ));
    }

    #[test]
    fn anchor_file_roundtrip() {
        let dir = std::env::temp_dir().join("primgrasp_anchor_io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("anchors.txt");
        let set = build_rotated_anchors(&[(20.5, 10.25), (81.0, 40.5)], 3);
        let meta = AnchorFileMeta { k: 2, angle_count: 3, seed: 42 };
        set.write_file(&path, &meta).unwrap();
        let back = AnchorSet::read_file(&path).unwrap();
        assert_eq!(back, set);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# k=2 angle_count=3 seed=42\n"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
