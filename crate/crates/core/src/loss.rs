//! Multi-task detection loss with per-term breakdown and gradient checking.
//!
//! The total is a weighted sum of four terms over the anchor grid: box
//! regression (cross-entropy on in-cell center fractions plus squared
//! differences of square-rooted normalized sizes), orientation cross-entropy,
//! and object / no-object confidence cross-entropy. Targets are frozen at the
//! evaluation point (the per-slot IoU confidence target is treated as a
//! constant, stop-gradient style), so analytic gradients and central finite
//! differences of the same frozen-target loss must agree.

use thiserror::Error;

use crate::anchors::{AnchorSet, Assignment};
use crate::primitives::{decode, normalize_angle, sigmoid, RotatedPrimitive};
use crate::tensor::RawTensor;

/// Clamp applied to every logarithm argument inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Below this gradient magnitude, absolute rather than relative error is
/// reported by the checker.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("weights must be non-negative, finite, and not all zero")]
    InvalidWeights,
    #[error("loss is non-finite in the step neighborhood of parameter {index}")]
    NonFiniteLoss { index: usize },
}

/// Per-term weights of the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub reg: f64,
    pub angle: f64,
    pub obj: f64,
    pub noobj: f64,
}

impl LossWeights {
    pub fn new(reg: f64, angle: f64, obj: f64, noobj: f64) -> Result<Self, LossError> {
        let all = [reg, angle, obj, noobj];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().all(|&w| w == 0.0) {
            return Err(LossError::InvalidWeights);
        }
        Ok(Self {
            reg,
            angle,
            obj,
            noobj,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reg: 1.0,
            angle: 1.0,
            obj: 1.0,
            noobj: 0.5,
        }
    }
}

/// The four unweighted terms plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub reg: f64,
    pub angle: f64,
    pub obj: f64,
    pub noobj: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Plain-text report: one line per term plus the total, 9 significant
    /// digits each.
    pub fn report(&self) -> String {
        format!(
            "reg {:.8e}\nangle {:.8e}\nobj {:.8e}\nnoobj {:.8e}\ntotal {:.8e}\n",
            self.reg, self.angle, self.obj, self.noobj, self.total
        )
    }
}

/// Binary cross-entropy `-t ln x - (1-t) ln(1-x)` with the prediction clamped
/// to `[BCE_EPS, 1-BCE_EPS]`.
pub fn bce(x: f64, target: f64) -> f64 {
    let x = x.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * x.ln() + (1.0 - target) * (1.0 - x).ln())
}

/// Derivative of [`bce`] in its first argument; zero inside the clamp bands,
/// matching the implemented loss exactly.
fn bce_grad(x: f64, target: f64) -> f64 {
    if x <= BCE_EPS || x >= 1.0 - BCE_EPS {
        return 0.0;
    }
    -target / x + (1.0 - target) / (1.0 - x)
}

/// Frozen per-slot targets; `None` marks a no-object slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    per_slot: Vec<Option<SlotTarget>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SlotTarget {
    cx_frac: f64,
    cy_frac: f64,
    sqrt_w: f64,
    sqrt_h: f64,
    angle: f64,
    conf: f64,
}

impl LossTargets {
    pub fn num_slots(&self) -> usize {
        self.per_slot.len()
    }
}

/// Builds frozen targets for every responsible slot. Center offsets are
/// in-cell fractions, sizes are square roots of image-side-normalized
/// dimensions, angles map through `theta/pi + 1/2`, and the confidence target
/// is the rotated IoU between the currently decoded prediction and its
/// matched ground truth.
pub fn build_targets(
    tensor: &RawTensor,
    anchors: &AnchorSet,
    gts: &[RotatedPrimitive],
    assignment: &Assignment,
) -> LossTargets {
    let layout = tensor.layout();
    assert_eq!(assignment.num_slots(), layout.num_slots());
    assert_eq!(anchors.len(), layout.b);
    let side = layout.image_side();
    let mut per_slot = vec![None; layout.num_slots()];
    for (slot, gt_index) in assignment.responsible() {
        let gt = &gts[gt_index];
        let (row, col, b) = layout.slot_position(slot);
        let raw = tensor.raw(row, col, b);
        let cell = layout.cell(col, row).expect("slot within layout");
        let (pred, _) = decode(&raw, &cell, anchors.get(b));
        per_slot[slot] = Some(SlotTarget {
            cx_frac: gt.cx / layout.stride - col as f64,
            cy_frac: gt.cy / layout.stride - row as f64,
            sqrt_w: (gt.w / side).sqrt(),
            sqrt_h: (gt.h / side).sqrt(),
            angle: gt.theta / std::f64::consts::PI + 0.5,
            conf: crate::overlap::rotated_iou(&pred, gt),
        });
    }
    LossTargets { per_slot }
}

/// Per-slot prediction values entering each loss term.
struct SlotPrediction {
    cx_frac: f64,
    cy_frac: f64,
    sqrt_w: f64,
    sqrt_h: f64,
    angle: f64,
    conf: f64,
}

fn slot_prediction(tensor: &RawTensor, anchors: &AnchorSet, slot: usize) -> SlotPrediction {
    let layout = tensor.layout();
    let (row, col, b) = layout.slot_position(slot);
    let base = tensor.slot_base(row, col, b);
    let v = tensor.values();
    let anchor = anchors.get(b);
    let side = layout.image_side();
    SlotPrediction {
        cx_frac: sigmoid(v[base]),
        cy_frac: sigmoid(v[base + 1]),
        sqrt_w: (anchor.pw * v[base + 2].exp() / side).sqrt(),
        sqrt_h: (anchor.ph * v[base + 3].exp() / side).sqrt(),
        angle: normalize_angle(anchor.theta_prior + v[base + 4].atan()) / std::f64::consts::PI
            + 0.5,
        conf: sigmoid(v[base + 5]),
    }
}

/// Box-regression term: center cross-entropies plus squared sqrt-size
/// differences over responsible slots.
pub fn reg_loss(tensor: &RawTensor, anchors: &AnchorSet, targets: &LossTargets) -> f64 {
    let mut acc = 0.0;
    for (slot, target) in targets.per_slot.iter().enumerate() {
        let Some(t) = target else { continue };
        let p = slot_prediction(tensor, anchors, slot);
        acc += bce(p.cx_frac, t.cx_frac) + bce(p.cy_frac, t.cy_frac);
        acc += (p.sqrt_w - t.sqrt_w).powi(2) + (p.sqrt_h - t.sqrt_h).powi(2);
    }
    acc
}

/// Orientation term over responsible slots.
pub fn angle_loss(tensor: &RawTensor, anchors: &AnchorSet, targets: &LossTargets) -> f64 {
    let mut acc = 0.0;
    for (slot, target) in targets.per_slot.iter().enumerate() {
        let Some(t) = target else { continue };
        let p = slot_prediction(tensor, anchors, slot);
        acc += bce(p.angle, t.angle);
    }
    acc
}

/// Confidence terms: responsible slots against their frozen IoU targets, all
/// other slots against zero.
pub fn obj_noobj_loss(
    tensor: &RawTensor,
    anchors: &AnchorSet,
    targets: &LossTargets,
) -> (f64, f64) {
    let (mut obj, mut noobj) = (0.0, 0.0);
    for (slot, target) in targets.per_slot.iter().enumerate() {
        let p = slot_prediction(tensor, anchors, slot);
        match target {
            Some(t) => obj += bce(p.conf, t.conf),
            None => noobj += bce(p.conf, 0.0),
        }
    }
    (obj, noobj)
}

/// Weighted sum of the four terms against frozen targets.
pub fn total_loss_with_targets(
    tensor: &RawTensor,
    anchors: &AnchorSet,
    targets: &LossTargets,
    weights: &LossWeights,
) -> LossBreakdown {
    let reg = reg_loss(tensor, anchors, targets);
    let angle = angle_loss(tensor, anchors, targets);
    let (obj, noobj) = obj_noobj_loss(tensor, anchors, targets);
    LossBreakdown {
        reg,
        angle,
        obj,
        noobj,
        total: weights.reg * reg + weights.angle * angle + weights.obj * obj
            + weights.noobj * noobj,
    }
}

/// Convenience entry point: builds targets at the current tensor and sums.
pub fn total_loss(
    tensor: &RawTensor,
    anchors: &AnchorSet,
    gts: &[RotatedPrimitive],
    assignment: &Assignment,
    weights: &LossWeights,
) -> LossBreakdown {
    let targets = build_targets(tensor, anchors, gts, assignment);
    total_loss_with_targets(tensor, anchors, &targets, weights)
}

/// Analytic gradient of the weighted total with respect to every tensor
/// value. Category scores do not enter the loss, so their entries are zero.
pub fn loss_gradients(
    tensor: &RawTensor,
    anchors: &AnchorSet,
    targets: &LossTargets,
    weights: &LossWeights,
) -> Vec<f64> {
    let layout = tensor.layout();
    let v = tensor.values();
    let side = layout.image_side();
    let mut grad = vec![0.0; v.len()];
    for (slot, target) in targets.per_slot.iter().enumerate() {
        let (row, col, b) = layout.slot_position(slot);
        let base = tensor.slot_base(row, col, b);
        let conf = sigmoid(v[base + 5]);
        let dconf = conf * (1.0 - conf);
        match target {
            Some(t) => {
                let anchor = anchors.get(b);
                let sx = sigmoid(v[base]);
                let sy = sigmoid(v[base + 1]);
                grad[base] = weights.reg * bce_grad(sx, t.cx_frac) * sx * (1.0 - sx);
                grad[base + 1] = weights.reg * bce_grad(sy, t.cy_frac) * sy * (1.0 - sy);
                // d sqrt(p e^t / L) / dt = sqrt(p e^t / L) / 2
                let sw = (anchor.pw * v[base + 2].exp() / side).sqrt();
                let sh = (anchor.ph * v[base + 3].exp() / side).sqrt();
                grad[base + 2] = weights.reg * (sw - t.sqrt_w) * sw;
                grad[base + 3] = weights.reg * (sh - t.sqrt_h) * sh;
                let ta = v[base + 4];
                let a_pred = normalize_angle(anchor.theta_prior + ta.atan())
                    / std::f64::consts::PI
                    + 0.5;
                grad[base + 4] = weights.angle * bce_grad(a_pred, t.angle)
                    / std::f64::consts::PI
                    / (1.0 + ta * ta);
                grad[base + 5] = weights.obj * bce_grad(conf, t.conf) * dconf;
            }
            None => {
                grad[base + 5] = weights.noobj * bce_grad(conf, 0.0) * dconf;
            }
        }
    }
    grad
}

/// Comparison of analytic gradients against central finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error over parameters with gradient magnitude above 1e-6.
    pub max_rel_error: f64,
    /// Max absolute error over near-zero-gradient parameters.
    pub max_abs_error: f64,
    pub worst_param: usize,
    pub params: usize,
}

/// Central-difference gradient check of an arbitrary scalar function.
pub fn grad_check<F: Fn(&[f64]) -> f64>(
    f: F,
    point: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<GradCheckReport, LossError> {
    assert_eq!(point.len(), analytic.len());
    assert!(step > 0.0 && step.is_finite());
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_param: 0,
        params: point.len(),
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(LossError::NonFiniteLoss { index: i });
        }
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        if scale > REL_FLOOR {
            let rel = (a - numeric).abs() / scale;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = i;
            }
        } else {
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        }
    }
    Ok(report)
}

/// Checks [`loss_gradients`] against finite differences of the frozen-target
/// loss at the tensor's current values.
pub fn check_loss_gradients(
    tensor: &RawTensor,
    anchors: &AnchorSet,
    targets: &LossTargets,
    weights: &LossWeights,
    step: f64,
) -> Result<GradCheckReport, LossError> {
    let analytic = loss_gradients(tensor, anchors, targets, weights);
    let template = tensor.clone();
    grad_check(
        move |values: &[f64]| {
            let mut t = template.clone();
            t.values_mut().copy_from_slice(values);
            total_loss_with_targets(&t, anchors, targets, weights).total
        },
        tensor.values(),
        &analytic,
        step,
    )
}
