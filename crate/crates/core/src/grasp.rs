//! Depth-based grasp synthesis from 2D detections.
//!
//! Detections collected over several frames are fused by medians (circular
//! median on doubled angles for the orientation), the consensus center is
//! backprojected through the pinhole model and a rigid hand-eye transform,
//! and the resulting pose is gated by workspace reachability.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::primitives::{normalize_angle, Category, RotatedPrimitive};
use crate::scene::Depth16;
use crate::suppression::ScoredDetection;

/// Pre-grasp finger opening is the object's minor axis scaled by this factor.
pub const APERTURE_SAFETY: f64 = 1.2;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("no valid depth available at the requested pixel")]
    InvalidDepth,
    #[error("pose ({x:.3}, {y:.3}, {z:.3}) is outside the workspace", x = pose.position[0], y = pose.position[1], z = pose.position[2])]
    Unreachable { pose: GraspPose },
    #[error("aperture {aperture:.3} m exceeds the gripper maximum {max:.3} m")]
    ApertureExceeded { aperture: f64, max: f64 },
    #[error("camera intrinsics invalid: {0}")]
    BadIntrinsics(String),
    #[error("extrinsics rotation is not orthonormal with determinant +1")]
    BadExtrinsics,
    #[error("workspace config invalid: {0}")]
    BadWorkspace(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

/// Pinhole intrinsics: focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx0: f64,
    pub cy0: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx0: f64, cy0: f64) -> Result<Self, GraspError> {
        if ![fx, fy, cx0, cy0].iter().all(|v| v.is_finite()) || fx <= 0.0 || fy <= 0.0 {
            return Err(GraspError::BadIntrinsics(format!(
                "fx={fx} fy={fy} cx={cx0} cy={cy0}"
            )));
        }
        Ok(Self { fx, fy, cx0, cy0 })
    }

    /// Parses a `fx= fy= cx= cy=` key/value text file.
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, GraspError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| GraspError::Io {
            path: display.clone(),
            source,
        })?;
        let mut vals = [None::<f64>; 4];
        const KEYS: [&str; 4] = ["fx", "fy", "cx", "cy"];
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(GraspError::Parse {
                    path: display,
                    msg: format!("expected key=value, got {line:?}"),
                });
            };
            let key = key.trim();
            let Some(idx) = KEYS.iter().position(|k| *k == key) else {
                return Err(GraspError::Parse {
                    path: display,
                    msg: format!("unknown key {key:?}"),
                });
            };
            let parsed = value.trim().parse().map_err(|e| GraspError::Parse {
                path: display.clone(),
                msg: format!("{key}: {e}"),
            })?;
            vals[idx] = Some(parsed);
        }
        for (i, v) in vals.iter().enumerate() {
            if v.is_none() {
                return Err(GraspError::Parse {
                    path: display,
                    msg: format!("missing key {}", KEYS[i]),
                });
            }
        }
        Self::new(
            vals[0].unwrap(),
            vals[1].unwrap(),
            vals[2].unwrap(),
            vals[3].unwrap(),
        )
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), GraspError> {
        let path = path.as_ref();
        let wrap = |source| GraspError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(wrap)?);
        write!(
            out,
            "fx={}\nfy={}\ncx={}\ncy={}\n",
            self.fx, self.fy, self.cx0, self.cy0
        )
        .map_err(wrap)?;
        out.flush().map_err(wrap)
    }
}

/// Rigid camera-to-robot-base transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Extrinsics {
    /// Requires `R^T R = I` to 1e-9 and `det R = +1`.
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, GraspError> {
        let r = &rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-9 {
                    return Err(GraspError::BadExtrinsics);
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(GraspError::BadExtrinsics);
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GraspError::BadExtrinsics);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    /// Parses 12 whitespace-separated numbers: rows of `[R | t]`.
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, GraspError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| GraspError::Io {
            path: display.clone(),
            source,
        })?;
        let nums: Result<Vec<f64>, _> = text
            .split_whitespace()
            .filter(|t| !t.starts_with('#'))
            .map(str::parse)
            .collect();
        let nums = nums.map_err(|e| GraspError::Parse {
            path: display.clone(),
            msg: format!("{e}"),
        })?;
        if nums.len() != 12 {
            return Err(GraspError::Parse {
                path: display,
                msg: format!("expected 12 numbers (rows of [R | t]), got {}", nums.len()),
            });
        }
        let row = |i: usize| [nums[i * 4], nums[i * 4 + 1], nums[i * 4 + 2]];
        Self::new(
            [row(0), row(1), row(2)],
            [nums[3], nums[7], nums[11]],
        )
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), GraspError> {
        let path = path.as_ref();
        let wrap = |source| GraspError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(wrap)?);
        for i in 0..3 {
            writeln!(
                out,
                "{} {} {} {}",
                self.rotation[i][0], self.rotation[i][1], self.rotation[i][2],
                self.translation[i]
            )
            .map_err(wrap)?;
        }
        out.flush().map_err(wrap)
    }
}

/// Reachability envelope of the arm plus the gripper's maximum opening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceConfig {
    /// Maximum reach from the robot base, meters.
    pub max_reach: f64,
    pub min_z: f64,
    pub max_z: f64,
    /// Maximum pre-grasp finger opening, meters.
    pub max_aperture: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            max_reach: 0.85,
            min_z: 0.01,
            max_z: 0.80,
            max_aperture: 0.15,
        }
    }
}

impl WorkspaceConfig {
    pub fn validate(&self) -> Result<(), GraspError> {
        if self.max_reach.is_nan() || self.max_reach <= 0.0 {
            return Err(GraspError::BadWorkspace("max_reach must be > 0".into()));
        }
        if self.min_z.is_nan() || self.max_z.is_nan() || self.min_z <= 0.0 || self.min_z >= self.max_z
        {
            return Err(GraspError::BadWorkspace(
                "require 0 < min_z < max_z".into(),
            ));
        }
        if self.max_aperture.is_nan() || self.max_aperture <= 0.0 {
            return Err(GraspError::BadWorkspace("max_aperture must be > 0".into()));
        }
        Ok(())
    }
}

/// A grasp target in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspPose {
    pub position: [f64; 3],
    /// Gripper yaw in `(-pi/2, pi/2]`.
    pub yaw: f64,
    /// Pre-grasp finger opening, meters.
    pub aperture: f64,
}

/// Formats one `x y z yaw aperture reachable_flag` output line.
pub fn format_pose_line(pose: &GraspPose, reachable: bool) -> String {
    format!(
        "{} {} {} {} {} {}",
        pose.position[0],
        pose.position[1],
        pose.position[2],
        pose.yaw,
        pose.aperture,
        u8::from(reachable)
    )
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Circular distance on the doubled-angle circle.
fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Circular median on doubled angles: maps each orientation to `2*theta`
/// on the unit circle, picks the sample minimizing total circular distance,
/// and halves back. Respects the period-pi symmetry of an undirected axis.
fn circular_median_axis(angles: &[f64]) -> f64 {
    debug_assert!(!angles.is_empty());
    let doubled: Vec<f64> = angles.iter().map(|&t| 2.0 * t).collect();
    let mut best = (0usize, f64::INFINITY);
    for (i, &candidate) in doubled.iter().enumerate() {
        let total: f64 = doubled.iter().map(|&d| circ_dist(candidate, d)).sum();
        if total < best.1 {
            best = (i, total);
        }
    }
    normalize_angle(doubled[best.0] / 2.0)
}

struct Track {
    category: Category,
    members: Vec<ScoredDetection>,
}

impl Track {
    fn median_center(&self) -> (f64, f64) {
        let mut xs: Vec<f64> = self.members.iter().map(|d| d.primitive.cx).collect();
        let mut ys: Vec<f64> = self.members.iter().map(|d| d.primitive.cy).collect();
        (median(&mut xs), median(&mut ys))
    }
}

/// Fuses per-frame detection lists into consensus detections.
///
/// Same-category detections are associated frame by frame to the nearest
/// track center within `match_radius` pixels (greedy by distance); tracks
/// seen in at least `min_presence` of the frames survive. Consensus center,
/// dimensions and score are per-coordinate medians; the consensus orientation
/// is the circular median on doubled angles. Equal-axes categories fuse both
/// axes through the median of each member's mean axis length.
pub fn aggregate_detections(
    frames: &[Vec<ScoredDetection>],
    match_radius: f64,
    min_presence: f64,
) -> Vec<ScoredDetection> {
    let mut tracks: Vec<Track> = Vec::new();
    for frame in frames {
        // Candidate (track, detection) pairs sorted by center distance.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, track) in tracks.iter().enumerate() {
            let (tx, ty) = track.median_center();
            for (di, det) in frame.iter().enumerate() {
                if det.primitive.category != track.category {
                    continue;
                }
                let dist = ((det.primitive.cx - tx).powi(2) + (det.primitive.cy - ty).powi(2))
                    .sqrt();
                if dist <= match_radius {
                    pairs.push((dist, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_taken = vec![false; tracks.len()];
        let mut det_taken = vec![false; frame.len()];
        for (_, ti, di) in pairs {
            if track_taken[ti] || det_taken[di] {
                continue;
            }
            track_taken[ti] = true;
            det_taken[di] = true;
            tracks[ti].members.push(frame[di].clone());
        }
        for (di, det) in frame.iter().enumerate() {
            if !det_taken[di] {
                tracks.push(Track {
                    category: det.primitive.category,
                    members: vec![det.clone()],
                });
            }
        }
    }

    let needed = min_presence * frames.len() as f64;
    let mut consensus = Vec::new();
    for track in &tracks {
        if (track.members.len() as f64) < needed - 1e-9 {
            continue;
        }
        let (cx, cy) = track.median_center();
        let (w, h) = if track.category.requires_equal_axes() {
            let mut sides: Vec<f64> = track
                .members
                .iter()
                .map(|d| (d.primitive.w + d.primitive.h) / 2.0)
                .collect();
            let side = median(&mut sides);
            (side, side)
        } else {
            let mut ws: Vec<f64> = track.members.iter().map(|d| d.primitive.w).collect();
            let mut hs: Vec<f64> = track.members.iter().map(|d| d.primitive.h).collect();
            (median(&mut ws), median(&mut hs))
        };
        let thetas: Vec<f64> = track.members.iter().map(|d| d.primitive.theta).collect();
        let theta = circular_median_axis(&thetas);
        let mut scores: Vec<f64> = track.members.iter().map(|d| d.score).collect();
        consensus.push(ScoredDetection {
            primitive: RotatedPrimitive::new(track.category, cx, cy, w, h, theta)
                .expect("medians of valid primitives stay valid"),
            score: median(&mut scores),
            source_index: consensus.len(),
        });
    }
    consensus
}

/// Backprojects a pixel with metric depth into the camera frame.
pub fn pixel_to_camera(
    u: f64,
    v: f64,
    depth_m: f64,
    k: &CameraIntrinsics,
) -> Result<[f64; 3], GraspError> {
    if !depth_m.is_finite() || depth_m <= 0.0 {
        return Err(GraspError::InvalidDepth);
    }
    Ok([
        (u - k.cx0) * depth_m / k.fx,
        (v - k.cy0) * depth_m / k.fy,
        depth_m,
    ])
}

/// Applies the rigid camera-to-robot transform `R p + t`.
pub fn camera_to_robot(p: [f64; 3], e: &Extrinsics) -> [f64; 3] {
    let r = &e.rotation;
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + e.translation[0],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + e.translation[1],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + e.translation[2],
    ]
}

/// Median of the valid (nonzero) depths in an odd `window`-sized neighborhood
/// around `(u, v)`, converted to meters.
pub fn sample_depth(map: &Depth16, u: f64, v: f64, window: usize) -> Result<f64, GraspError> {
    assert!(!window.is_multiple_of(2), "window must be odd");
    let x = u.round() as i64;
    let y = v.round() as i64;
    assert!(
        x >= 0 && (x as usize) < map.width && y >= 0 && (y as usize) < map.height,
        "({u}, {v}) outside the {}x{} depth map",
        map.width,
        map.height
    );
    let half = (window / 2) as i64;
    let mut vals: Vec<f64> = Vec::with_capacity(window * window);
    for dy in -half..=half {
        for dx in -half..=half {
            let px = x + dx;
            let py = y + dy;
            if px < 0 || py < 0 || px as usize >= map.width || py as usize >= map.height {
                continue;
            }
            let mm = map.get(px as usize, py as usize);
            if mm > 0 {
                vals.push(mm as f64);
            }
        }
    }
    if vals.is_empty() {
        return Err(GraspError::InvalidDepth);
    }
    Ok(median(&mut vals) / 1000.0)
}

/// Builds the grasp pose for a consensus detection at a robot-frame position.
///
/// The gripper closes across the minor axis: yaw follows the primitive's
/// orientation, except circles where any yaw works and 0 is reported.
/// `pixel_to_m` converts the pixel aperture to meters (typically `Z / fx`).
/// Rejects poses outside the reachability envelope (boundary inclusive) or
/// beyond the gripper opening.
pub fn synthesize_grasp(
    prim: &RotatedPrimitive,
    p_robot: [f64; 3],
    ws: &WorkspaceConfig,
    pixel_to_m: f64,
) -> Result<GraspPose, GraspError> {
    assert!(p_robot.iter().all(|v| v.is_finite()), "position must be finite");
    ws.validate()?;
    let yaw = if prim.category == Category::Circle {
        0.0
    } else {
        prim.theta
    };
    let aperture = prim.h * pixel_to_m * APERTURE_SAFETY;
    let pose = GraspPose {
        position: p_robot,
        yaw,
        aperture,
    };
    let norm = (p_robot[0].powi(2) + p_robot[1].powi(2) + p_robot[2].powi(2)).sqrt();
    if norm > ws.max_reach || p_robot[2] < ws.min_z || p_robot[2] > ws.max_z {
        return Err(GraspError::Unreachable { pose });
    }
    if aperture > ws.max_aperture {
        return Err(GraspError::ApertureExceeded {
            aperture,
            max: ws.max_aperture,
        });
    }
    Ok(pose)
}
