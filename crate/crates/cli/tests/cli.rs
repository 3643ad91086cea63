//! End-to-end tests of the `primgrasp` binary: subcommand behavior, file
//! formats, determinism, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use primgrasp::anchors::{build_rotated_anchors, AnchorFileMeta};
use primgrasp::primitives::{Anchor, Category, HeadLayout, RotatedPrimitive};
use primgrasp::scene::{write_labels, write_pgm16, Depth16};
use primgrasp::tensor::RawTensor;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_primgrasp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join("primgrasp_cli_tests")
        .join(format!("{name}_{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_is_byte_deterministic() {
    let root = tmp("synth_det");
    let a = root.join("a");
    let b = root.join("b");
    for dir in [&a, &b] {
        let out = run(&[
            "synth",
            "--out-dir",
            dir.to_str().unwrap(),
            "--count",
            "3",
            "--seed",
            "7",
            "--depth",
            "--width",
            "128",
            "--height",
            "128",
            "--min-size",
            "16",
            "--max-size",
            "40",
        ]);
        assert_success(&out);
    }
    let ta = tree_bytes(&a);
    let tb = tree_bytes(&b);
    assert_eq!(ta.len(), 3 * 3 + 1);
    assert_eq!(ta, tb, "same seed must reproduce the output tree exactly");
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn decode_all_zero_tensor_below_threshold() {
    let root = tmp("decode_zero");
    let layout = HeadLayout::new(2, 1, 4, 8.0).unwrap();
    let tensor_path = root.join("zero.rprt");
    RawTensor::zeroed(layout).write_file(&tensor_path).unwrap();
    let anchors_path = root.join("anchors.txt");
    let set = build_rotated_anchors(&[(20.0, 10.0)], 1);
    set.write_file(&anchors_path, &AnchorFileMeta { k: 1, angle_count: 1, seed: 0 })
        .unwrap();
    let dets_path = root.join("dets.txt");
    let out = run(&[
        "decode",
        "--tensor",
        tensor_path.to_str().unwrap(),
        "--anchors",
        anchors_path.to_str().unwrap(),
        "--out",
        dets_path.to_str().unwrap(),
        "--score-threshold",
        "0.6",
    ]);
    assert_success(&out);
    // sigma(0) * uniform softmax = 0.125 < 0.6: nothing survives.
    let text = std::fs::read_to_string(&dets_path).unwrap();
    assert!(text.trim().is_empty(), "expected no detections, got {text:?}");
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn decode_rejects_anchor_count_mismatch() {
    let root = tmp("decode_mismatch");
    let layout = HeadLayout::new(2, 2, 4, 8.0).unwrap();
    let tensor_path = root.join("zero.rprt");
    RawTensor::zeroed(layout).write_file(&tensor_path).unwrap();
    let anchors_path = root.join("anchors.txt");
    build_rotated_anchors(&[(20.0, 10.0)], 1)
        .write_file(&anchors_path, &AnchorFileMeta { k: 1, angle_count: 1, seed: 0 })
        .unwrap();
    let out = run(&[
        "decode",
        "--tensor",
        tensor_path.to_str().unwrap(),
        "--anchors",
        anchors_path.to_str().unwrap(),
        "--out",
        root.join("dets.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("B=2"), "stderr: {stderr}");
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn exit_codes_for_bad_invocations() {
    // Unknown flag: validation, exit 1.
    let out = run(&["nms", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
    // Missing input file: validation, exit 1, message names the path.
    let out = run(&[
        "nms",
        "--dets",
        "/nonexistent/dets.txt",
        "--out",
        "/tmp/primgrasp_never.txt",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/dets.txt"));
    // Threshold outside [0, 1]: exit 1, message names the value.
    let out = run(&[
        "nms",
        "--dets",
        "/tmp/x.txt",
        "--out",
        "/tmp/y.txt",
        "--iou-threshold",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1.5"));
    // --help exits 0.
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn anchors_command_writes_lattice() {
    let root = tmp("anchors_cmd");
    let scenes = root.join("scenes");
    assert_success(&run(&[
        "synth",
        "--out-dir",
        scenes.to_str().unwrap(),
        "--count",
        "6",
        "--seed",
        "3",
    ]));
    let anchors_path = root.join("anchors.txt");
    let out = run(&[
        "anchors",
        "--manifest",
        scenes.join("manifest.txt").to_str().unwrap(),
        "--out",
        anchors_path.to_str().unwrap(),
        "--k",
        "4",
        "--angles",
        "3",
        "--seed",
        "1",
    ]);
    assert_success(&out);
    let text = std::fs::read_to_string(&anchors_path).unwrap();
    assert!(text.starts_with("# k=4 angle_count=3 seed=1\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 12);
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn nms_drops_duplicate_and_writes_overlay() {
    let root = tmp("nms_cmd");
    let dets_path = root.join("dets.txt");
    std::fs::write(
        &dets_path,
        "3 50 50 30 20 0.2 0.9\n3 50 50 30 20 0.2 0.8\n1 120 120 40 24 -0.4 0.7\n",
    )
    .unwrap();
    let out_path = root.join("kept.txt");
    let overlay_path = root.join("overlay.ppm");
    let out = run(&[
        "nms",
        "--dets",
        dets_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--overlay",
        overlay_path.to_str().unwrap(),
    ]);
    assert_success(&out);
    let kept = primgrasp::suppression::read_detections(&out_path).unwrap();
    assert_eq!(kept.len(), 2);
    assert_eq!(kept[0].score, 0.9);
    let image = primgrasp::scene::read_ppm(&overlay_path).unwrap();
    assert!(image.width >= 140 && image.height >= 140);
    std::fs::remove_dir_all(&root).unwrap();
}

/// Builds a small labeled head with an oracle-encoded tensor on disk.
fn small_loss_fixture(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let layout = HeadLayout::new(4, 2, 4, 16.0).unwrap();
    let anchors = vec![
        Anchor::new(18.0, 9.0, 0.0).unwrap(),
        Anchor::new(36.0, 30.0, 0.0).unwrap(),
    ];
    let set = primgrasp::anchors::AnchorSet::new(anchors);
    let labels = vec![
        RotatedPrimitive::new(Category::Rectangle, 24.0, 40.0, 20.0, 10.0, 0.3).unwrap(),
        RotatedPrimitive::new(Category::Ellipse, 52.0, 12.0, 30.0, 22.0, -0.7).unwrap(),
    ];
    let mut tensor = RawTensor::zeroed(layout);
    for (i, v) in tensor.values_mut().iter_mut().enumerate() {
        // Deterministic non-trivial values bounded away from the clamps.
        *v = ((i as f64 * 0.7391) % 3.0) - 1.5;
    }
    let tensor_path = root.join("head.rprt");
    tensor.write_file(&tensor_path).unwrap();
    let anchors_path = root.join("anchors.txt");
    set.write_file(&anchors_path, &AnchorFileMeta { k: 2, angle_count: 1, seed: 0 })
        .unwrap();
    let labels_path = root.join("labels.txt");
    write_labels(&labels, &labels_path).unwrap();
    (tensor_path, anchors_path, labels_path)
}

#[test]
fn loss_report_format() {
    let root = tmp("loss_cmd");
    let (tensor, anchors, labels) = small_loss_fixture(&root);
    let report_path = root.join("loss.txt");
    let out = run(&[
        "loss",
        "--tensor",
        tensor.to_str().unwrap(),
        "--anchors",
        anchors.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_success(&out);
    let report = std::fs::read_to_string(&report_path).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 5);
    for (line, term) in lines.iter().zip(["reg", "angle", "obj", "noobj", "total"]) {
        assert!(line.starts_with(term), "line {line:?} should start with {term}");
        let value: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(value >= 0.0);
    }
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn gradcheck_reports_tight_gradients() {
    let root = tmp("gradcheck_cmd");
    let (tensor, anchors, labels) = small_loss_fixture(&root);
    let report_path = root.join("grad.txt");
    let out = run(&[
        "gradcheck",
        "--tensor",
        tensor.to_str().unwrap(),
        "--anchors",
        anchors.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_success(&out);
    let report = std::fs::read_to_string(&report_path).unwrap();
    assert!(report.contains("within_tolerance true"), "report: {report}");
    let max_rel: f64 = report
        .lines()
        .find(|l| l.starts_with("max_rel_error"))
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(max_rel <= 1e-4, "max_rel_error {max_rel}");
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn grasp_command_backprojects_plane() {
    let root = tmp("grasp_cmd");
    let depth_path = root.join("depth.pgm");
    write_pgm16(&Depth16::filled(640, 480, 600), &depth_path).unwrap();
    let intr_path = root.join("intrinsics.txt");
    std::fs::write(&intr_path, "fx=600\nfy=600\ncx=320\ncy=240\n").unwrap();
    let extr_path = root.join("extrinsics.txt");
    std::fs::write(&extr_path, "1 0 0 0\n0 1 0 0\n0 0 1 0\n").unwrap();
    let dets_path = root.join("dets.txt");
    std::fs::write(&dets_path, "3 320 240 40 20 0.2 0.9\n").unwrap();
    let poses_path = root.join("poses.txt");
    let out = run(&[
        "grasp",
        "--dets",
        dets_path.to_str().unwrap(),
        "--depth",
        depth_path.to_str().unwrap(),
        "--intrinsics",
        intr_path.to_str().unwrap(),
        "--extrinsics",
        extr_path.to_str().unwrap(),
        "--out",
        poses_path.to_str().unwrap(),
    ]);
    assert_success(&out);
    let text = std::fs::read_to_string(&poses_path).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields.len(), 6);
    let vals: Vec<f64> = fields.iter().map(|f| f.parse().unwrap()).collect();
    // Object at the principal point on a 600 mm plane: (0, 0, 0.6) in both
    // frames with identity extrinsics; aperture 20 px * 0.001 m/px * 1.2.
    assert!(vals[0].abs() < 1e-9 && vals[1].abs() < 1e-9);
    assert!((vals[2] - 0.6).abs() < 1e-9);
    assert!((vals[3] - 0.2).abs() < 1e-9);
    assert!((vals[4] - 0.024).abs() < 1e-9);
    assert_eq!(vals[5], 1.0);
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn pipeline_reaches_perfect_metrics() {
    let root = tmp("pipeline_cmd");
    let out = run(&[
        "pipeline",
        "--out-dir",
        root.to_str().unwrap(),
        "--seed",
        "7",
        "--count",
        "8",
    ]);
    assert_success(&out);
    let metrics = std::fs::read_to_string(root.join("metrics.txt")).unwrap();
    let summary = metrics
        .lines()
        .find(|l| l.starts_with("summary"))
        .expect("summary line");
    assert!(
        summary.contains("precision 1.000000") && summary.contains("recall 1.000000"),
        "summary: {summary}"
    );
    assert!(summary.contains("fp 0") && summary.contains("fn 0"));
    // Per-scene artifacts all exist.
    for stem in (0..8).map(|i| format!("scene_{i:04}")) {
        assert!(root.join("scenes").join(format!("{stem}.ppm")).exists());
        assert!(root.join("scenes").join(format!("{stem}_depth.pgm")).exists());
        assert!(root.join("tensors").join(format!("{stem}.rprt")).exists());
        assert!(root.join("dets").join(format!("{stem}.txt")).exists());
        assert!(root.join("dets_nms").join(format!("{stem}.txt")).exists());
        let poses = std::fs::read_to_string(root.join("grasps").join(format!("{stem}.txt")))
            .unwrap();
        let gts = primgrasp::scene::read_labels(root.join("scenes").join(format!("{stem}.txt")))
            .unwrap();
        assert_eq!(poses.lines().count(), gts.len());
        for line in poses.lines() {
            assert!(line.ends_with(" 1"), "pose should be reachable: {line}");
        }
    }
    assert!(root.join("anchors.txt").exists());
    assert!(root.join("intrinsics.txt").exists());
    assert!(root.join("extrinsics.txt").exists());
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn pipeline_rejects_bad_stride() {
    let root = tmp("pipeline_stride");
    let out = run(&[
        "pipeline",
        "--out-dir",
        root.to_str().unwrap(),
        "--seed",
        "1",
        "--count",
        "1",
        "--stride",
        "48",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--stride"));
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn eval_command_manifest_mode() {
    let root = tmp("eval_cmd");
    // Two scenes: one perfect, one with a miss.
    let labels_a = vec![
        RotatedPrimitive::new(Category::Rectangle, 60.0, 60.0, 30.0, 20.0, 0.1).unwrap(),
    ];
    let labels_b = vec![
        RotatedPrimitive::new(Category::Ellipse, 40.0, 40.0, 30.0, 20.0, 0.0).unwrap(),
        RotatedPrimitive::new(Category::Square, 120.0, 120.0, 25.0, 25.0, 0.3).unwrap(),
    ];
    write_labels(&labels_a, root.join("labels_a.txt")).unwrap();
    write_labels(&labels_b, root.join("labels_b.txt")).unwrap();
    std::fs::write(root.join("dets_a.txt"), "3 60 60 30 20 0.1 0.9\n").unwrap();
    std::fs::write(root.join("dets_b.txt"), "1 40 40 30 20 0 0.8\n").unwrap();
    std::fs::write(root.join("dets.manifest"), "dets_a.txt\ndets_b.txt\n").unwrap();
    std::fs::write(root.join("labels.manifest"), "labels_a.txt\nlabels_b.txt\n").unwrap();
    let metrics_path = root.join("metrics.txt");
    let out = run(&[
        "eval",
        "--dets-manifest",
        root.join("dets.manifest").to_str().unwrap(),
        "--labels-manifest",
        root.join("labels.manifest").to_str().unwrap(),
        "--out",
        metrics_path.to_str().unwrap(),
    ]);
    assert_success(&out);
    let metrics = std::fs::read_to_string(&metrics_path).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let summary = metrics.lines().last().unwrap();
    // tp 2, fp 0, fn 1 -> precision 1, recall 2/3.
    assert!(summary.contains("tp 2 fp 0 fn 1"), "{summary}");
    assert!(summary.contains("precision 1.000000"));
    assert!(summary.contains("recall 0.666667"));
    std::fs::remove_dir_all(&root).unwrap();
}
