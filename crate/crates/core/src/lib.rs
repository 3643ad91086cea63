//! Rotated geometric-primitive detection pipeline with depth-based grasp
//! synthesis.
//!
//! The crate covers everything around a detection backbone, which stays
//! abstracted behind the raw-prediction tensor format in [`tensor`]:
//!
//! - [`primitives`]: the 5-parameter ellipse/rectangle representation and the
//!   raw-prediction decode/encode transforms.
//! - [`overlap`]: exact rotated IoU via convex polygon clipping.
//! - [`montecarlo`]: independent sampling oracles for areas and IoU.
//! - [`suppression`]: rotated NMS with an AABB prefilter.
//! - [`anchors`]: k-means dimension clustering, the rotated anchor lattice,
//!   and ground-truth assignment.
//! - [`loss`]: the four-term detection loss with analytic gradients and a
//!   finite-difference checker.
//! - [`scene`]: procedural labeled scenes plus PPM/PGM/label file formats.
//! - [`grasp`]: multi-frame consensus, depth backprojection, and grasp poses.
//! - [`metrics`]: precision/recall against ground truth.
//!
//! Batch entry points parallelize over rayon when the default `parallel`
//! feature is enabled and fall back to sequential loops without it; results
//! are identical either way.

pub mod anchors;
pub mod grasp;
pub mod loss;
pub mod metrics;
pub mod montecarlo;
pub mod overlap;
pub mod primitives;
pub mod scene;
pub mod suppression;
pub mod tensor;

pub use primitives::{Category, RotatedPrimitive};
pub use suppression::ScoredDetection;
