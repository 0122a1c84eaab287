//! Keyframe-tagged spatial database.
//!
//! Every map point remembers the keyframe it came from, so a click on the
//! CAD model resolves to an image: ray-cast the mesh, snap to the nearest
//! vertex, take the nearest map point, return its source keyframe.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    ray_triangle_intersect, CameraIntrinsics, GeometryError, Ray, RigidPose, TriangleMesh, Vec3,
};
use crate::kdtree::KdTree;
use crate::planes::FittedPlane;

/// Hits whose ray parameters differ by at most this much are ties.
pub const PICK_TIE_TOLERANCE: f64 = 1e-9;

pub type KeyframeId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("ray does not hit the model")]
    Miss,
    #[error("the database has no map points")]
    EmptyDatabase,
    #[error("the mesh has no triangles")]
    EmptyMesh,
    #[error("map point {point_index} references missing keyframe {keyframe}")]
    DanglingKeyframe { point_index: usize, keyframe: KeyframeId },
    #[error("map point index {0} appears more than once")]
    DuplicatePointIndex(usize),
    #[error("keyframe id {0} appears more than once")]
    DuplicateKeyframe(KeyframeId),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub position: Vec3,
    pub index: usize,
    pub source_keyframe: KeyframeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub id: KeyframeId,
    pub pose: RigidPose,
    /// Image locator, opaque to this crate (a relative path in projects).
    pub image: String,
    pub intrinsics: CameraIntrinsics,
}

/// Nearest ray/mesh intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickHit {
    pub triangle: usize,
    pub t: f64,
    pub point: Vec3,
}

/// Answer to a spatial image query, with the full lookup chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub keyframe_id: KeyframeId,
    pub hit: Vec3,
    pub triangle: usize,
    pub vertex_index: usize,
    pub vertex: Vec3,
    pub point_index: usize,
    pub point: Vec3,
    /// Distance from the snapped vertex to the chosen map point, meters.
    pub point_distance: f64,
    /// Set when `point_distance` exceeds the database's warning threshold.
    pub sparse_warning: bool,
}

/// Distance beyond which a query's nearest map point is flagged as far.
pub const DEFAULT_SPARSE_WARNING_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatabaseData {
    points: Vec<MapPoint>,
    keyframes: BTreeMap<KeyframeId, Keyframe>,
    mesh: TriangleMesh,
    planes: Vec<FittedPlane>,
    #[serde(default = "default_warning")]
    sparse_warning_distance: f64,
}

fn default_warning() -> f64 {
    DEFAULT_SPARSE_WARNING_DISTANCE
}

/// Immutable, validated database. Queries are read-only and may run
/// concurrently.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DatabaseData", into = "DatabaseData")]
pub struct SpatialDatabase {
    data: DatabaseData,
    point_tree: KdTree,
    vertex_tree: KdTree,
}

impl PartialEq for SpatialDatabase {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (&self.data, &other.data);
        a.points == b.points
            && a.keyframes == b.keyframes
            && a.mesh == b.mesh
            && a.planes == b.planes
            && a.sparse_warning_distance == b.sparse_warning_distance
    }
}

impl TryFrom<DatabaseData> for SpatialDatabase {
    type Error = SpatialError;

    fn try_from(data: DatabaseData) -> Result<Self, SpatialError> {
        if data.mesh.is_empty() {
            return Err(SpatialError::EmptyMesh);
        }
        data.mesh.validate()?;
        let mut seen = HashSet::with_capacity(data.points.len());
        for p in &data.points {
            if !seen.insert(p.index) {
                return Err(SpatialError::DuplicatePointIndex(p.index));
            }
            if !data.keyframes.contains_key(&p.source_keyframe) {
                return Err(SpatialError::DanglingKeyframe {
                    point_index: p.index,
                    keyframe: p.source_keyframe,
                });
            }
        }
        // index by position in `points`; the tie rule is on MapPoint.index
        let point_tree = KdTree::build(data.points.iter().map(|p| (p.position, p.index)));
        let vertex_tree = KdTree::build(data.mesh.vertices.iter().copied().zip(0..));
        Ok(Self {
            data,
            point_tree,
            vertex_tree,
        })
    }
}

impl From<SpatialDatabase> for DatabaseData {
    fn from(db: SpatialDatabase) -> Self {
        db.data
    }
}

/// Validates inputs and builds the lookup structures.
pub fn build_database(
    points: Vec<MapPoint>,
    keyframes: Vec<Keyframe>,
    mesh: TriangleMesh,
    planes: Vec<FittedPlane>,
) -> Result<SpatialDatabase, SpatialError> {
    let mut store = BTreeMap::new();
    for kf in keyframes {
        let id = kf.id;
        if store.insert(id, kf).is_some() {
            return Err(SpatialError::DuplicateKeyframe(id));
        }
    }
    SpatialDatabase::try_from(DatabaseData {
        points,
        keyframes: store,
        mesh,
        planes,
        sparse_warning_distance: DEFAULT_SPARSE_WARNING_DISTANCE,
    })
}

impl SpatialDatabase {
    pub fn with_sparse_warning_distance(mut self, meters: f64) -> Self {
        self.data.sparse_warning_distance = meters;
        self
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.data.points
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &Keyframe> {
        self.data.keyframes.values()
    }

    pub fn keyframe(&self, id: KeyframeId) -> Option<&Keyframe> {
        self.data.keyframes.get(&id)
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.data.mesh
    }

    pub fn planes(&self) -> &[FittedPlane] {
        &self.data.planes
    }

    /// Map point by its `index` field.
    pub fn point_by_index(&self, index: usize) -> Option<&MapPoint> {
        // points are usually stored in index order
        match self.data.points.get(index) {
            Some(p) if p.index == index => Some(p),
            _ => self.data.points.iter().find(|p| p.index == index),
        }
    }

    pub fn pick(&self, ray: &Ray) -> Option<PickHit> {
        pick(&self.data.mesh, ray)
    }

    /// Nearest mesh vertex via the vertex tree.
    pub fn snap_to_vertex(&self, p: &Vec3) -> (usize, Vec3) {
        let (i, _) = self
            .vertex_tree
            .nearest(p)
            .expect("validated mesh has vertices");
        (i, self.data.mesh.vertices[i])
    }

    pub fn nearest_map_point(&self, p: &Vec3) -> Result<&MapPoint, SpatialError> {
        let (index, _) = self.point_tree.nearest(p).ok_or(SpatialError::EmptyDatabase)?;
        Ok(self.point_by_index(index).expect("tree ids come from points"))
    }

    /// Pick → snap → nearest map point → source keyframe.
    pub fn query_image(&self, ray: &Ray) -> Result<QueryResult, SpatialError> {
        if self.data.points.is_empty() {
            return Err(SpatialError::EmptyDatabase);
        }
        let hit = self.pick(ray).ok_or(SpatialError::Miss)?;
        let (vertex_index, vertex) = self.snap_to_vertex(&hit.point);
        let point = self.nearest_map_point(&vertex)?;
        let point_distance = (point.position - vertex).norm();
        Ok(QueryResult {
            keyframe_id: point.source_keyframe,
            hit: hit.point,
            triangle: hit.triangle,
            vertex_index,
            vertex,
            point_index: point.index,
            point: point.position,
            point_distance,
            sparse_warning: point_distance > self.data.sparse_warning_distance,
        })
    }
}

/// Nearest intersection over all triangles; ties within
/// [`PICK_TIE_TOLERANCE`] go to the lowest triangle index.
pub fn pick(mesh: &TriangleMesh, ray: &Ray) -> Option<PickHit> {
    let hits: Vec<PickHit> = (0..mesh.triangles.len())
        .filter_map(|i| {
            ray_triangle_intersect(ray, &mesh.triangle(i)).map(|h| PickHit {
                triangle: i,
                t: h.t,
                point: h.point,
            })
        })
        .collect();
    let t_min = hits.iter().map(|h| h.t).fold(f64::INFINITY, f64::min);
    hits.into_iter()
        .find(|h| h.t <= t_min + PICK_TIE_TOLERANCE)
}

/// Nearest vertex by linear scan; ties go to the lowest vertex index.
pub fn snap_to_vertex(mesh: &TriangleMesh, p: &Vec3) -> Option<(usize, Vec3)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in mesh.vertices.iter().enumerate() {
        let d = (v - p).norm_squared();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| (i, mesh.vertices[i]))
}
