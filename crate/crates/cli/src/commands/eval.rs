use std::path::PathBuf;

use primgrasp::metrics::{match_detections, precision_recall, MatchResult};
use primgrasp::scene::{read_labels, read_manifest};
use primgrasp::suppression::read_detections;

use crate::error::{io_context, CliError};
use crate::EvalArgs;

fn scene_line(name: &str, result: &MatchResult) -> String {
    let (p, r) = precision_recall(result);
    format!(
        "{name} tp {} fp {} fn {} precision {p:.6} recall {r:.6}",
        result.true_positives, result.false_positives, result.false_negatives
    )
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let pairs: Vec<(PathBuf, PathBuf)> = match (&args.dets_manifest, &args.labels_manifest) {
        (Some(dm), Some(lm)) => {
            let dets = read_manifest(dm)?;
            let labels = read_manifest(lm)?;
            if dets.len() != labels.len() {
                return Err(CliError::validation(format!(
                    "--dets-manifest lists {} files but --labels-manifest lists {}",
                    dets.len(),
                    labels.len()
                )));
            }
            dets.into_iter().zip(labels).collect()
        }
        _ => vec![(
            args.dets.clone().expect("clap enforces --dets"),
            args.labels.clone().expect("clap enforces --labels"),
        )],
    };

    let mut lines = Vec::with_capacity(pairs.len() + 1);
    let mut total = MatchResult::default();
    for (det_path, label_path) in &pairs {
        let dets = read_detections(det_path)?;
        let gts = read_labels(label_path)?;
        let result = match_detections(&dets, &gts, args.iou_threshold, !args.category_agnostic);
        total.absorb(&result);
        let name = det_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| det_path.display().to_string());
        lines.push(scene_line(&name, &result));
    }
    lines.push(scene_line("summary", &total));
    let report = lines.join("\n") + "\n";
    std::fs::write(&args.out, &report).map_err(io_context(&args.out))?;
    print!("{report}");
    Ok(())
}
