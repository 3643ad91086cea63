use std::io::Write;
use std::path::PathBuf;

use primgrasp::anchors::{
    assign_targets, build_rotated_anchors, cluster_dims, AnchorFileMeta, ClusterConfig,
};
use primgrasp::grasp::{
    aggregate_detections, camera_to_robot, format_pose_line, pixel_to_camera, sample_depth,
    synthesize_grasp, CameraIntrinsics, Extrinsics, GraspError, WorkspaceConfig,
};
use primgrasp::metrics::{match_detections, precision_recall, MatchResult};
use primgrasp::primitives::{encode, HeadLayout};
use primgrasp::scene::{self, write_manifest};
use primgrasp::suppression::{rnms, write_detections, NmsConfig};
use primgrasp::tensor::RawTensor;

use crate::error::{io_context, CliError};
use crate::PipelineArgs;

/// Confidence raw value for non-responsible oracle slots; sigmoid(-12) is
/// far below any usable score threshold.
const ORACLE_NOOBJ_TC: f64 = -12.0;

/// Seeded end-to-end run over synthetic scenes: the oracle tensors are built
/// from the ground truth via the encode transform, so a perfect decode, NMS,
/// and matching chain must reach precision = recall = 1.
pub fn run(args: PipelineArgs) -> Result<(), CliError> {
    if args.scene.width != args.scene.height {
        return Err(CliError::validation(format!(
            "--width {} and --height {} must agree for the square detection grid",
            args.scene.width, args.scene.height
        )));
    }
    let cells = args.scene.width as f64 / args.stride;
    if args.stride.is_nan() || args.stride <= 0.0 || cells.fract() != 0.0 || cells < 1.0 {
        return Err(CliError::validation(format!(
            "--width {} is not a positive multiple of --stride {}",
            args.scene.width, args.stride
        )));
    }
    let spec = args.scene.to_spec(true);
    spec.validate()?;

    let scenes_dir = args.out_dir.join("scenes");
    let tensors_dir = args.out_dir.join("tensors");
    let dets_dir = args.out_dir.join("dets");
    let nms_dir = args.out_dir.join("dets_nms");
    let grasps_dir = args.out_dir.join("grasps");
    for dir in [&scenes_dir, &tensors_dir, &dets_dir, &nms_dir, &grasps_dir] {
        super::ensure_dir(dir)?;
    }

    // Stage 1: scenes.
    let scenes = scene::generate_batch(&spec, args.seed, args.count)?;
    let mut label_paths: Vec<PathBuf> = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let stem = format!("scene_{i:04}");
        scene::write_scene(s, &scenes_dir, &stem)?;
        label_paths.push(PathBuf::from(format!("{stem}.txt")));
    }
    write_manifest(&label_paths, scenes_dir.join("manifest.txt"))?;

    // Stage 2: anchors from the generated labels.
    let all_labels: Vec<_> = scenes.iter().flat_map(|s| s.labels.clone()).collect();
    let outcome = cluster_dims(
        &all_labels,
        &ClusterConfig {
            k: args.k,
            seed: args.seed,
            max_iter: 100,
            tol: 1e-6,
        },
    )?;
    let anchors = build_rotated_anchors(&outcome.centroids, args.angles);
    anchors.write_file(
        args.out_dir.join("anchors.txt"),
        &AnchorFileMeta {
            k: args.k,
            angle_count: args.angles,
            seed: args.seed,
        },
    )?;
    let layout = HeadLayout::new(cells as usize, anchors.len(), 4, args.stride)
        .map_err(|e| CliError::validation(e.to_string()))?;

    // Shared calibration for the grasp stage: camera straight above the
    // table, principal point at the image center.
    let intrinsics = CameraIntrinsics::new(
        600.0,
        600.0,
        args.scene.width as f64 / 2.0,
        args.scene.height as f64 / 2.0,
    )
    .expect("constant intrinsics are valid");
    intrinsics.write_file(args.out_dir.join("intrinsics.txt"))?;
    let extrinsics = Extrinsics::identity();
    extrinsics.write_file(args.out_dir.join("extrinsics.txt"))?;
    let ws = WorkspaceConfig::default();

    // Stage 3: per-scene oracle tensor, decode, NMS, matching, grasps.
    let nms_config = NmsConfig {
        iou_threshold: args.iou_threshold,
        ..NmsConfig::default()
    };
    let mut metric_lines = Vec::with_capacity(scenes.len() + 1);
    let mut total = MatchResult::default();
    for (i, s) in scenes.iter().enumerate() {
        let stem = format!("scene_{i:04}");
        let assignment = assign_targets(&s.labels, &anchors, &layout)?;
        let mut tensor = RawTensor::zeroed(layout);
        let vps = layout.values_per_slot();
        for slot in 0..layout.num_slots() {
            tensor.values_mut()[slot * vps + 5] = ORACLE_NOOBJ_TC;
        }
        for (slot, gt) in assignment.responsible() {
            let (row, col, b) = layout.slot_position(slot);
            let cell = layout.cell(col, row).map_err(CliError::from)?;
            let raw = encode(
                &s.labels[gt],
                &cell,
                anchors.get(b),
                args.oracle_score,
                layout.c,
            )?;
            tensor.set_raw(row, col, b, &raw);
        }
        tensor.write_file(tensors_dir.join(format!("{stem}.rprt")))?;
        let tensor = RawTensor::read_file(tensors_dir.join(format!("{stem}.rprt")))?;

        let dets = super::decode_all(&tensor, &anchors, args.score_threshold);
        write_detections(&dets, dets_dir.join(format!("{stem}.txt")))?;
        let kept = rnms(&dets, &nms_config);
        write_detections(&kept, nms_dir.join(format!("{stem}.txt")))?;

        let result = match_detections(&kept, &s.labels, args.iou_threshold, true);
        let (p, r) = precision_recall(&result);
        metric_lines.push(format!(
            "{stem} tp {} fp {} fn {} precision {p:.6} recall {r:.6}",
            result.true_positives, result.false_positives, result.false_negatives
        ));
        total.absorb(&result);

        // Grasp synthesis from the scene's depth raster.
        let depth = s.depth.as_ref().expect("pipeline scenes carry depth");
        let consensus = aggregate_detections(&[kept], 20.0, 0.5);
        let pose_path = grasps_dir.join(format!("{stem}.txt"));
        let file = std::fs::File::create(&pose_path).map_err(io_context(&pose_path))?;
        let mut out = std::io::BufWriter::new(file);
        for det in &consensus {
            let prim = &det.primitive;
            let z = match sample_depth(depth, prim.cx, prim.cy, 5) {
                Ok(z) => z,
                Err(GraspError::InvalidDepth) => {
                    log::warn!("{stem}: no valid depth at ({:.1}, {:.1})", prim.cx, prim.cy);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let robot = camera_to_robot(
                pixel_to_camera(prim.cx, prim.cy, z, &intrinsics)?,
                &extrinsics,
            );
            let line = match synthesize_grasp(prim, robot, &ws, z / intrinsics.fx) {
                Ok(pose) => format_pose_line(&pose, true),
                Err(GraspError::Unreachable { pose }) => format_pose_line(&pose, false),
                Err(e) => return Err(e.into()),
            };
            writeln!(out, "{line}").map_err(io_context(&pose_path))?;
        }
        out.flush().map_err(io_context(&pose_path))?;
    }

    let (p, r) = precision_recall(&total);
    metric_lines.push(format!(
        "summary tp {} fp {} fn {} precision {p:.6} recall {r:.6}",
        total.true_positives, total.false_positives, total.false_negatives
    ));
    let metrics_path = args.out_dir.join("metrics.txt");
    std::fs::write(&metrics_path, metric_lines.join("\n") + "\n")
        .map_err(io_context(&metrics_path))?;
    println!(
        "pipeline over {} scenes: precision {p:.6}, recall {r:.6} (metrics in {})",
        scenes.len(),
        metrics_path.display()
    );
    Ok(())
}
