//! RANSAC plane extraction by voting, with least-squares refinement.
//!
//! Each round draws `hypotheses_per_plane` planes through random point
//! triples, scores every hypothesis by the number of remaining points within
//! `inlier_threshold`, and accepts the best one if it gathers at least
//! `min_votes`. Its voters become the plane's members and leave the pool.
//! Whatever is left when no hypothesis reaches `min_votes` (or `max_planes`
//! planes exist) is returned as outliers.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PlaneParams, Vec3};
use crate::spatial::MapPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaneError {
    #[error("points are collinear or coincident")]
    Degenerate,
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub hypotheses_per_plane: usize,
    pub inlier_threshold: f64,
    pub min_votes: usize,
    pub collinearity_tolerance: f64,
    pub max_planes: usize,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            hypotheses_per_plane: 500,
            inlier_threshold: 0.05,
            min_votes: 50,
            collinearity_tolerance: 1e-6,
            max_planes: 16,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PlaneError> {
        if !(self.inlier_threshold > 0.0) {
            return Err(PlaneError::InvalidConfig(format!(
                "inlier_threshold must be positive, got {}",
                self.inlier_threshold
            )));
        }
        if self.min_votes < 3 {
            return Err(PlaneError::InvalidConfig(format!(
                "min_votes must be at least 3, got {}",
                self.min_votes
            )));
        }
        if self.hypotheses_per_plane == 0 {
            return Err(PlaneError::InvalidConfig(
                "hypotheses_per_plane must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneHypothesis {
    pub params: PlaneParams,
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPlane {
    pub params: PlaneParams,
    /// `MapPoint::index` values of the points that voted for this plane.
    pub member_indices: Vec<usize>,
    pub score: usize,
}

/// Number of resampling attempts before a hypothesis slot is given up.
const MAX_SAMPLE_ATTEMPTS: usize = 64;

/// Plane through three distinct random points, or `None` when the draw is
/// collinear or coincident. Collinear means triangle area below
/// `tolerance × (longest side)²`.
pub fn sample_hypothesis(
    points: &[Vec3],
    rng: &mut impl Rng,
    tolerance: f64,
) -> Option<PlaneHypothesis> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let mut k = rng.random_range(0..n - 2);
    for taken in [i.min(j), i.max(j)] {
        if k >= taken {
            k += 1;
        }
    }
    plane_through(&points[i], &points[j], &points[k], tolerance).map(|params| PlaneHypothesis {
        params,
        votes: 0,
    })
}

fn plane_through(a: &Vec3, b: &Vec3, c: &Vec3, tolerance: f64) -> Option<PlaneParams> {
    let normal = (b - a).cross(&(c - a));
    let area = 0.5 * normal.norm();
    let longest = (b - a)
        .norm_squared()
        .max((c - a).norm_squared())
        .max((c - b).norm_squared());
    if longest == 0.0 || area < tolerance * longest {
        return None;
    }
    PlaneParams::from_point_normal(a, &normal).ok()
}

/// Number of points within `threshold` of the hypothesis plane.
pub fn score_hypothesis(h: &PlaneHypothesis, points: &[Vec3], threshold: f64) -> usize {
    points
        .iter()
        .filter(|p| h.params.distance(p).abs() <= threshold)
        .count()
}

/// Total-least-squares plane: normal along the smallest principal axis of
/// the centered covariance, passing through the centroid.
///
/// The normal is oriented so that `d <= 0` (pointing away from the origin);
/// planes through the origin get a positive largest normal component.
pub fn refine_plane_least_squares(points: &[Vec3]) -> Result<PlaneParams, PlaneError> {
    if points.len() < 3 {
        return Err(PlaneError::TooFewPoints(points.len()));
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let q = p - centroid;
        cov += q * q.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (middle, largest) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if largest <= 0.0 || middle <= 1e-12 * largest {
        return Err(PlaneError::Degenerate);
    }
    let normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    let plane = PlaneParams::from_point_normal(&centroid, &normal).map_err(|_| PlaneError::Degenerate)?;
    Ok(canonical(plane))
}

fn canonical(plane: PlaneParams) -> PlaneParams {
    if plane.d > 1e-12 {
        return plane.flipped();
    }
    if plane.d.abs() <= 1e-12 {
        let n = plane.normal();
        if n[n.iamax()] < 0.0 {
            return plane.flipped();
        }
    }
    plane
}

/// Seed of the independent RNG stream for one hypothesis slot.
fn stream_seed(seed: u64, round: usize, slot: usize) -> u64 {
    // splitmix64 over the packed coordinates
    let mut z = seed
        ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (slot as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Output of [`extract_planes`]. Indices are `MapPoint::index` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneExtraction {
    pub planes: Vec<FittedPlane>,
    pub outliers: Vec<usize>,
}

/// Greedy sequential RANSAC. Deterministic for a given `cfg.rng_seed`,
/// independent of thread count.
pub fn extract_planes(points: &[MapPoint], cfg: &RansacConfig) -> Result<PlaneExtraction, PlaneError> {
    cfg.validate()?;
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut planes = Vec::new();

    for round in 0..cfg.max_planes {
        if remaining.len() < cfg.min_votes.max(3) {
            break;
        }
        let pool: Vec<Vec3> = remaining.iter().map(|&i| points[i].position).collect();
        let best = (0..cfg.hypotheses_per_plane)
            .into_par_iter()
            .filter_map(|slot| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.rng_seed, round, slot));
                let h = (0..MAX_SAMPLE_ATTEMPTS)
                    .find_map(|_| sample_hypothesis(&pool, &mut rng, cfg.collinearity_tolerance))?;
                let votes = score_hypothesis(&h, &pool, cfg.inlier_threshold);
                Some((slot, PlaneHypothesis { votes, ..h }))
            })
            // highest votes, then lowest slot
            .reduce_with(|a, b| {
                if b.1.votes > a.1.votes || (b.1.votes == a.1.votes && b.0 < a.0) {
                    b
                } else {
                    a
                }
            });
        let Some((_, best)) = best else { break };
        if best.votes < cfg.min_votes {
            break;
        }

        let (members, rest): (Vec<usize>, Vec<usize>) = remaining
            .iter()
            .partition(|&&i| best.params.distance(&points[i].position).abs() <= cfg.inlier_threshold);
        let member_positions: Vec<Vec3> = members.iter().map(|&i| points[i].position).collect();
        let params = refine_plane_least_squares(&member_positions).unwrap_or(best.params);
        planes.push(FittedPlane {
            params,
            member_indices: members.iter().map(|&i| points[i].index).collect(),
            score: best.votes,
        });
        remaining = rest;
    }

    Ok(PlaneExtraction {
        planes,
        outliers: remaining.iter().map(|&i| points[i].index).collect(),
    })
}
