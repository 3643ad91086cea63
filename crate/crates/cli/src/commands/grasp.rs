use std::io::Write;

use primgrasp::grasp::{
    aggregate_detections, camera_to_robot, format_pose_line, pixel_to_camera, sample_depth,
    synthesize_grasp, CameraIntrinsics, Extrinsics, GraspError, WorkspaceConfig,
};
use primgrasp::scene::read_pgm16;
use primgrasp::suppression::read_detections;

use crate::error::{io_context, CliError};
use crate::GraspArgs;

pub fn run(args: GraspArgs) -> Result<(), CliError> {
    if args.window.is_multiple_of(2) {
        return Err(CliError::validation(format!(
            "--window must be a positive odd integer, got {}",
            args.window
        )));
    }
    let ws = WorkspaceConfig {
        max_reach: args.max_reach,
        min_z: args.min_z,
        max_z: args.max_z,
        max_aperture: args.max_aperture,
    };
    ws.validate()
        .map_err(|e| CliError::validation(format!("workspace flags: {e}")))?;
    let depth = read_pgm16(&args.depth)?;
    let intrinsics = CameraIntrinsics::read_file(&args.intrinsics)?;
    let extrinsics = Extrinsics::read_file(&args.extrinsics)?;

    let mut frames = Vec::with_capacity(args.dets.len());
    for path in &args.dets {
        frames.push(read_detections(path)?);
    }
    let consensus = aggregate_detections(&frames, args.match_radius, args.min_presence);

    let file = std::fs::File::create(&args.out).map_err(io_context(&args.out))?;
    let mut out = std::io::BufWriter::new(file);
    let mut written = 0usize;
    for det in &consensus {
        let prim = &det.primitive;
        let (u, v) = (prim.cx, prim.cy);
        if u < 0.0 || v < 0.0 || u >= depth.width as f64 || v >= depth.height as f64 {
            log::warn!("consensus center ({u:.1}, {v:.1}) outside the depth raster; skipped");
            continue;
        }
        let z = match sample_depth(&depth, u, v, args.window) {
            Ok(z) => z,
            Err(GraspError::InvalidDepth) => {
                log::warn!("no valid depth around ({u:.1}, {v:.1}); skipped");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let cam = pixel_to_camera(u, v, z, &intrinsics)?;
        let robot = camera_to_robot(cam, &extrinsics);
        let pixel_to_m = z / intrinsics.fx;
        let line = match synthesize_grasp(prim, robot, &ws, pixel_to_m) {
            Ok(pose) => format_pose_line(&pose, true),
            Err(GraspError::Unreachable { pose }) => format_pose_line(&pose, false),
            Err(GraspError::ApertureExceeded { aperture, max }) => {
                log::warn!("aperture {aperture:.3} m exceeds gripper maximum {max:.3} m");
                format_pose_line(
                    &primgrasp::grasp::GraspPose {
                        position: robot,
                        yaw: if prim.category == primgrasp::Category::Circle {
                            0.0
                        } else {
                            prim.theta
                        },
                        aperture,
                    },
                    false,
                )
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(out, "{line}").map_err(io_context(&args.out))?;
        written += 1;
    }
    out.flush().map_err(io_context(&args.out))?;
    println!(
        "fused {} frames into {} consensus detections; wrote {written} poses to {}",
        frames.len(),
        consensus.len(),
        args.out.display()
    );
    Ok(())
}
