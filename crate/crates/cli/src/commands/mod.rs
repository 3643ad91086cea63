pub mod anchors;
pub mod decode;
pub mod eval;
pub mod gradcheck;
pub mod grasp;
pub mod loss;
pub mod nms;
pub mod pipeline;
pub mod synth;

use std::path::Path;

use primgrasp::anchors::AnchorSet;
use primgrasp::suppression::ScoredDetection;
use primgrasp::tensor::RawTensor;

use crate::error::{io_context, CliError};

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(io_context(path))
}

/// Rejects an anchor file whose anchor count disagrees with the tensor header.
pub fn check_compat(tensor: &RawTensor, anchors: &AnchorSet) -> Result<(), CliError> {
    let b = tensor.layout().b;
    if anchors.len() != b {
        return Err(CliError::validation(format!(
            "--anchors holds {} anchors but the tensor header declares B={b}",
            anchors.len()
        )));
    }
    Ok(())
}

/// Decodes every slot, keeping detections at or above the score threshold in
/// canonical slot order.
pub fn decode_all(
    tensor: &RawTensor,
    anchors: &AnchorSet,
    score_threshold: f64,
) -> Vec<ScoredDetection> {
    let layout = *tensor.layout();
    let mut dets = Vec::new();
    for slot in 0..layout.num_slots() {
        let (row, col, b) = layout.slot_position(slot);
        let raw = tensor.raw(row, col, b);
        let cell = layout.cell(col, row).expect("slot within layout");
        let (primitive, score) = primgrasp::primitives::decode(&raw, &cell, anchors.get(b));
        if score >= score_threshold {
            dets.push(ScoredDetection {
                primitive,
                score,
                source_index: dets.len(),
            });
        }
    }
    dets
}

/// Loads the optional overlay base image.
pub fn overlay_base(
    image: &Option<std::path::PathBuf>,
) -> Result<Option<primgrasp::scene::Rgb8>, CliError> {
    Ok(match image {
        Some(path) => Some(primgrasp::scene::read_ppm(path)?),
        None => None,
    })
}
