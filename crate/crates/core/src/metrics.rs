//! Detection-quality metrics against ground truth at rotated-IoU thresholds.

use crate::overlap::{self, ConvexPolygon};
use crate::primitives::RotatedPrimitive;
use crate::suppression::ScoredDetection;

/// One matched detection / ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Outcome of matching one scene's detections against its ground truth.
/// `true_positives + false_negatives` equals the ground-truth count and
/// `true_positives + false_positives` the detection count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub matches: Vec<MatchPair>,
}

impl MatchResult {
    /// Accumulates counts across scenes (per-scene match pairs are dropped).
    pub fn absorb(&mut self, other: &MatchResult) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }
}

/// Greedy matching in descending detection-score order: each detection claims
/// the unmatched ground truth of highest rotated IoU at or above `iou_thr`
/// (same category required when `require_category`). Unmatched detections are
/// false positives, unmatched ground truths false negatives.
pub fn match_detections(
    dets: &[ScoredDetection],
    gts: &[RotatedPrimitive],
    iou_thr: f64,
    require_category: bool,
) -> MatchResult {
    let det_polys: Vec<(ConvexPolygon, f64)> = dets
        .iter()
        .map(|d| {
            let p = overlap::to_polygon(&d.primitive, overlap::ELLIPSE_SEGMENTS);
            let a = overlap::area(&p);
            (p, a)
        })
        .collect();
    let gt_polys: Vec<(ConvexPolygon, f64)> = gts
        .iter()
        .map(|g| {
            let p = overlap::to_polygon(g, overlap::ELLIPSE_SEGMENTS);
            let a = overlap::area(&p);
            (p, a)
        })
        .collect();

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .total_cmp(&dets[i].score)
            .then(dets[i].source_index.cmp(&dets[j].source_index))
    });

    let mut gt_taken = vec![false; gts.len()];
    let mut matches = Vec::new();
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            if require_category && gt.category != dets[di].primitive.category {
                continue;
            }
            let iou = overlap::polygon_iou(
                &det_polys[di].0,
                det_polys[di].1,
                &gt_polys[gi].0,
                gt_polys[gi].1,
            );
            if iou >= iou_thr {
                let better = match best {
                    None => true,
                    Some((_, b)) => iou > b,
                };
                if better {
                    best = Some((gi, iou));
                }
            }
        }
        if let Some((gi, iou)) = best {
            gt_taken[gi] = true;
            matches.push(MatchPair { det: di, gt: gi, iou });
        }
    }
    let tp = matches.len();
    MatchResult {
        true_positives: tp,
        false_positives: dets.len() - tp,
        false_negatives: gts.len() - tp,
        matches,
    }
}

/// Precision and recall with the empty-set conventions: precision is 1 when
/// there are no detections, recall is 1 when there are no ground truths.
pub fn precision_recall(result: &MatchResult) -> (f64, f64) {
    let tp = result.true_positives as f64;
    let precision = if result.true_positives + result.false_positives == 0 {
        1.0
    } else {
        tp / (tp + result.false_positives as f64)
    };
    let recall = if result.true_positives + result.false_negatives == 0 {
        1.0
    } else {
        tp / (tp + result.false_negatives as f64)
    };
    (precision, recall)
}
