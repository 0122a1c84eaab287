//! Registration of the SLAM map to the CAD model.
//!
//! The first keyframe is located in the model with P3P plus a fourth-point
//! check. The map→model similarity then comes from four user clicks: each
//! click in keyframe 1 is matched into keyframe 2 by NCC, triangulated in the
//! SLAM frame, and paired with its model-space click for Horn's method.

mod horn;
mod ncc;
mod p3p;

pub use horn::{horn_similarity, similarity_rms};
pub use ncc::{ncc_match, NccMatch, PatchMatchConfig};
pub use p3p::{solve_p3p, P3P_REPROJECTION_TOLERANCE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    project, ray_from_pixel, CameraIntrinsics, GeometryError, PixelPoint, RigidPose, Similarity,
    Vec3,
};
use crate::raster::GrayImage;
use crate::spatial::{Keyframe, MapPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("P3P produced no admissible solution")]
    NoSolution,
    #[error("every candidate pose places the fourth point behind the camera")]
    FourthPointBehindCamera,
    #[error("reference patch of size {patch_size} at ({u:.1}, {v:.1}) leaves the image")]
    PatchOutOfBounds { u: f64, v: f64, patch_size: u32 },
    #[error("no NCC match for click(s) {indices:?}")]
    NoMatch { indices: Vec<usize> },
    #[error("camera centers coincide (baseline {baseline:.3e} m)")]
    ZeroBaseline { baseline: f64 },
    #[error("back-projected rays are parallel")]
    ParallelRays,
    #[error("invalid matcher configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence3D2D {
    pub model_point: Vec3,
    pub image_point: PixelPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence3D3D {
    pub model_point: Vec3,
    pub map_point: Vec3,
}

/// Picks the P3P root that best reprojects a fourth correspondence.
///
/// Candidates that put the fourth point behind the camera are skipped; ties
/// go to the lowest index.
pub fn disambiguate_p3p(
    solutions: &[RigidPose],
    fourth: &Correspondence3D2D,
    k: &CameraIntrinsics,
) -> Result<RigidPose, RegistrationError> {
    if solutions.is_empty() {
        return Err(RegistrationError::NoSolution);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, pose) in solutions.iter().enumerate() {
        let Ok(px) = project(k, pose, &fourth.model_point) else {
            continue;
        };
        let err = px.distance(&fourth.image_point);
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((i, err));
        }
    }
    best.map(|(i, _)| solutions[i])
        .ok_or(RegistrationError::FourthPointBehindCamera)
}

/// World(CAD)→camera pose of the first keyframe from four ordered clicks.
pub fn register_first_keyframe(
    corr: &[Correspondence3D2D; 4],
    k: &CameraIntrinsics,
) -> Result<RigidPose, RegistrationError> {
    let solutions = solve_p3p(&[corr[0], corr[1], corr[2]], k)?;
    disambiguate_p3p(&solutions, &corr[3], k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: Vec3,
    /// Reprojection error in each view, pixels.
    pub residuals: [f64; 2],
}

/// Midpoint of the common perpendicular of the two back-projected rays.
pub fn triangulate(
    pose1: &RigidPose,
    pose2: &RigidPose,
    px1: &PixelPoint,
    px2: &PixelPoint,
    k: &CameraIntrinsics,
) -> Result<Triangulation, RegistrationError> {
    let r1 = ray_from_pixel(k, pose1, px1);
    let r2 = ray_from_pixel(k, pose2, px2);
    let baseline = (r1.origin - r2.origin).norm();
    if baseline <= 1e-6 {
        return Err(RegistrationError::ZeroBaseline { baseline });
    }
    let b = r1.direction.dot(&r2.direction);
    let denom = 1.0 - b * b;
    if r1.direction.cross(&r2.direction).norm() <= 1e-8 || denom <= 0.0 {
        return Err(RegistrationError::ParallelRays);
    }
    let w0 = r1.origin - r2.origin;
    let d = r1.direction.dot(&w0);
    let e = r2.direction.dot(&w0);
    let s = (b * e - d) / denom;
    let u = (e - b * d) / denom;
    let point = (r1.at(s) + r2.at(u)) * 0.5;
    let residual = |pose: &RigidPose, px: &PixelPoint| {
        project(k, pose, &point)
            .map(|p| p.distance(px))
            .unwrap_or(f64::INFINITY)
    };
    Ok(Triangulation {
        point,
        residuals: [residual(pose1, px1), residual(pose2, px2)],
    })
}

/// Diagnostics of a map→model alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAlignment {
    /// Maps SLAM-frame coordinates into the CAD frame.
    pub similarity: Similarity,
    pub matches: Vec<PixelPoint>,
    pub ncc_scores: Vec<f64>,
    pub map_points: Vec<Vec3>,
    pub triangulation_residuals: Vec<[f64; 2]>,
    /// RMS model-space residual of the fitted similarity, meters.
    pub rms: f64,
}

/// Images of the two keyframes used to bootstrap the alignment.
pub struct AlignmentViews<'a> {
    pub first: &'a Keyframe,
    pub first_image: &'a GrayImage,
    pub second: &'a Keyframe,
    pub second_image: &'a GrayImage,
}

/// Map→model similarity from four model clicks and the matching clicks in
/// the first keyframe. Clicks must be given in the same order.
pub fn build_model_alignment(
    clicks_model: &[Vec3; 4],
    clicks_first: &[PixelPoint; 4],
    views: &AlignmentViews<'_>,
    k: &CameraIntrinsics,
    cfg: &PatchMatchConfig,
) -> Result<ModelAlignment, RegistrationError> {
    let mut matches = Vec::with_capacity(4);
    let mut scores = Vec::with_capacity(4);
    let mut failed = Vec::new();
    for (i, px) in clicks_first.iter().enumerate() {
        match ncc_match(views.first_image, px, views.second_image, cfg)? {
            Some(m) => {
                matches.push(m.point);
                scores.push(m.score);
            }
            None => failed.push(i),
        }
    }
    if !failed.is_empty() {
        return Err(RegistrationError::NoMatch { indices: failed });
    }

    let mut pairs = Vec::with_capacity(4);
    let mut map_points = Vec::with_capacity(4);
    let mut residuals = Vec::with_capacity(4);
    for i in 0..4 {
        let tri = triangulate(
            &views.first.pose,
            &views.second.pose,
            &clicks_first[i],
            &matches[i],
            k,
        )?;
        map_points.push(tri.point);
        residuals.push(tri.residuals);
        pairs.push(Correspondence3D3D {
            model_point: clicks_model[i],
            map_point: tri.point,
        });
    }
    let similarity = horn_similarity(&pairs)?;
    Ok(ModelAlignment {
        rms: similarity_rms(&similarity, &pairs),
        similarity,
        matches,
        ncc_scores: scores,
        map_points,
        triangulation_residuals: residuals,
    })
}

/// Re-expresses a world→camera (or camera→world) pose after the world frame
/// is mapped by `t`. The camera center moves with `t`; scale leaves the
/// orientation unchanged.
pub fn align_pose(pose: &RigidPose, t: &Similarity) -> RigidPose {
    let wc = pose.to_world_to_camera();
    let center = t.apply(&pose.center());
    let rotation = wc.rotation * t.rotation.inverse();
    let aligned = RigidPose::new(
        rotation,
        -(rotation * center),
        crate::geometry::PoseDirection::WorldToCamera,
    );
    if pose.direction == wc.direction {
        aligned
    } else {
        aligned.inverse()
    }
}

/// Applies `t` to every map point and keyframe pose, keeping ids and tags.
pub fn align_map(
    points: &[MapPoint],
    keyframes: &[Keyframe],
    t: &Similarity,
) -> (Vec<MapPoint>, Vec<Keyframe>) {
    let points = points
        .iter()
        .map(|p| MapPoint {
            position: t.apply(&p.position),
            ..p.clone()
        })
        .collect();
    let keyframes = keyframes
        .iter()
        .map(|kf| Keyframe {
            pose: align_pose(&kf.pose, t),
            ..kf.clone()
        })
        .collect();
    (points, keyframes)
}

#[cfg(test)]
mod tests;
