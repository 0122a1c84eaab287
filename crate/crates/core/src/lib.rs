//! Core algorithms for registering a monocular SLAM keyframe map to a CAD
//! model of a building and working with the aligned result.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`geometry`]: value types (poses, similarities, rays, planes, meshes) and
//!   exact primitives shared by everything else.
//! - [`registration`]: P3P registration of the first keyframe, NCC patch
//!   matching, two-view triangulation and closed-form similarity estimation.
//! - [`planes`]: RANSAC plane extraction with least-squares refinement.
//! - [`spatial`]: the keyframe-tagged spatial database and its pick/query path.
//! - [`measurement`]: window detection in keyframe images and pixel-to-metric
//!   measurement.
//! - [`texturing`]: per-plane keyframe selection, rectification and
//!   compositing into a texture atlas.
//! - [`stats`]: error statistics, Welch t-test, two-factor ANOVA and the
//!   distribution functions behind them.
//! - [`synthetic`]: a deterministic parametric facade used by tests, the
//!   fixture generator and the acceptance suite.

pub mod geometry;
pub mod kdtree;
pub mod measurement;
pub mod planes;
pub mod raster;
pub mod registration;
pub mod spatial;
pub mod stats;
pub mod synthetic;
pub mod texturing;

pub use geometry::{
    CameraIntrinsics, PixelPoint, PlaneParams, PoseDirection, Ray, RigidPose, Similarity,
    TriangleMesh, Vec3,
};
