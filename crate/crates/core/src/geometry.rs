//! Value types and exact geometric primitives.
//!
//! Conventions used throughout the crate:
//!
//! - Model (CAD) coordinates are right-handed, in meters.
//! - Cameras look down their +z axis, +x to the right and +y down in the image.
//! - Pixel coordinates place the center of pixel `(col, row)` at `(col, row)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Tolerance on quaternion norm and ray direction norm.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Points closer than this to the camera plane count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth:.3e})")]
    BehindCamera { depth: f64 },
    #[error("similarity scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("ray direction has zero length")]
    ZeroDirection,
    #[error("plane normal has zero length")]
    ZeroNormal,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("triangle {triangle} references vertex {vertex} but the mesh has {count} vertices")]
    VertexOutOfRange {
        triangle: usize,
        vertex: usize,
        count: usize,
    },
    #[error("triangle {0} is degenerate")]
    DegenerateTriangle(usize),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
}

/// Which way a [`RigidPose`] maps points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseDirection {
    WorldToCamera,
    CameraToWorld,
}

/// A rotation and translation, tagged with the direction it maps points.
///
/// For `WorldToCamera` the pose maps `x_cam = R * x_world + t`; for
/// `CameraToWorld` it maps `x_world = R * x_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
    pub direction: PoseDirection,
}

impl RigidPose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3, direction: PoseDirection) -> Self {
        Self {
            rotation,
            translation,
            direction,
        }
    }

    pub fn identity() -> Self {
        Self::new(
            UnitQuaternion::identity(),
            Vec3::zeros(),
            PoseDirection::WorldToCamera,
        )
    }

    /// World-to-camera pose looking from `center` toward `target`, with the
    /// image "up" as close as possible to `up`.
    pub fn look_at(center: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - center).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rows = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rows));
        let translation = -(rotation * center);
        Self::new(rotation, translation, PoseDirection::WorldToCamera)
    }

    /// Same motion expressed in the opposite direction.
    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        let direction = match self.direction {
            PoseDirection::WorldToCamera => PoseDirection::CameraToWorld,
            PoseDirection::CameraToWorld => PoseDirection::WorldToCamera,
        };
        Self::new(rotation, -(rotation * self.translation), direction)
    }

    pub fn to_world_to_camera(&self) -> Self {
        match self.direction {
            PoseDirection::WorldToCamera => *self,
            PoseDirection::CameraToWorld => self.inverse(),
        }
    }

    pub fn to_camera_to_world(&self) -> Self {
        match self.direction {
            PoseDirection::CameraToWorld => *self,
            PoseDirection::WorldToCamera => self.inverse(),
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.to_camera_to_world().translation
    }

    /// Maps a world point into the camera frame.
    pub fn world_to_camera_point(&self, p: &Vec3) -> Vec3 {
        let wc = self.to_world_to_camera();
        wc.rotation * p + wc.translation
    }

    /// Maps a camera-frame point into the world frame.
    pub fn camera_to_world_point(&self, p: &Vec3) -> Vec3 {
        let cw = self.to_camera_to_world();
        cw.rotation * p + cw.translation
    }

    /// Rotation angle (radians) and translation distance separating two poses,
    /// both compared in the world-to-camera direction.
    pub fn distance_to(&self, other: &RigidPose) -> (f64, f64) {
        let a = self.to_world_to_camera();
        let b = other.to_world_to_camera();
        (a.rotation.angle_to(&b.rotation), (a.translation - b.translation).norm())
    }
}

/// Rotation, translation and uniform scale: `p -> s * R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn new(
        rotation: UnitQuaternion<f64>,
        translation: Vec3,
        scale: f64,
    ) -> Result<Self, GeometryError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeometryError::InvalidScale(scale));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite("similarity translation"));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Similarity) -> Similarity {
        Similarity {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Similarity {
        let rotation = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        Similarity {
            rotation,
            translation: -scale * (rotation * self.translation),
            scale,
        }
    }

    /// 3×3 linear part `s * R`.
    pub fn linear_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner() * self.scale
    }
}

/// Half-line `origin + t * direction`, `t >= 0`, with unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self, GeometryError> {
        let norm = direction.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(GeometryError::ZeroDirection);
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite("ray origin"));
        }
        Ok(Self {
            origin,
            direction: direction / norm,
        })
    }

    pub fn through(origin: Vec3, target: Vec3) -> Result<Self, GeometryError> {
        Self::new(origin, target - origin)
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Plane `a x + b y + c z + d = 0` with unit normal `(a, b, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PlaneParams {
    /// Normalizes arbitrary coefficients so the normal has unit length.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, GeometryError> {
        let n = (a * a + b * b + c * c).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::ZeroNormal);
        }
        Ok(Self {
            a: a / n,
            b: b / n,
            c: c / n,
            d: d / n,
        })
    }

    pub fn from_point_normal(point: &Vec3, normal: &Vec3) -> Result<Self, GeometryError> {
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(GeometryError::ZeroNormal);
        }
        let n = normal / len;
        Ok(Self {
            a: n.x,
            b: n.y,
            c: n.z,
            d: -n.dot(point),
        })
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::new(self.a, self.b, self.c)
    }

    /// Signed distance, positive on the side the normal points to.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.a * p.x + self.b * p.y + self.c * p.z + self.d
    }

    pub fn flipped(&self) -> Self {
        Self {
            a: -self.a,
            b: -self.b,
            c: -self.c,
            d: -self.d,
        }
    }

    /// Orthogonal projection of `p` onto the plane.
    pub fn project_point(&self, p: &Vec3) -> Vec3 {
        p - self.normal() * self.distance(p)
    }

    /// Angle between the two planes' normals, ignoring orientation.
    pub fn angle_to(&self, other: &PlaneParams) -> f64 {
        self.normal().dot(&other.normal()).abs().min(1.0).acos()
    }
}

/// Signed distance of `p` from the plane.
pub fn point_plane_distance(plane: &PlaneParams, p: &Vec3) -> f64 {
    plane.distance(p)
}

pub fn apply_similarity(t: &Similarity, p: &Vec3) -> Vec3 {
    t.apply(p)
}

/// Indexed triangle mesh, optionally grouped into named parts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Group names, referenced by `triangle_groups`.
    #[serde(default)]
    pub groups: Vec<String>,
    /// Per-triangle index into `groups`; empty when the mesh is ungrouped.
    #[serde(default)]
    pub triangle_groups: Vec<Option<usize>>,
}

pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let mesh = Self {
            vertices,
            triangles,
            groups: Vec::new(),
            triangle_groups: Vec::new(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite("mesh vertex"));
        }
        let count = self.vertices.len();
        for (i, tri) in self.triangles.iter().enumerate() {
            if let Some(&vertex) = tri.iter().find(|&&v| v >= count) {
                return Err(GeometryError::VertexOutOfRange {
                    triangle: i,
                    vertex,
                    count,
                });
            }
            if self.triangle_area(i) <= MIN_TRIANGLE_AREA {
                return Err(GeometryError::DegenerateTriangle(i));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Group name of triangle `i`, if any.
    pub fn group_of(&self, i: usize) -> Option<&str> {
        self.triangle_groups
            .get(i)
            .copied()
            .flatten()
            .map(|g| self.groups[g].as_str())
    }
}

/// Pinhole intrinsics for undistorted images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be positive".into(),
            ));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Camera-frame direction (z = 1) through a pixel.
    pub fn unproject(&self, px: &PixelPoint) -> Vec3 {
        Vec3::new((px.u - self.cx) / self.fx, (px.v - self.cy) / self.fy, 1.0)
    }

    /// Whether a pixel lies within the image, pixel centers spanning
    /// `[0, width-1] x [0, height-1]`.
    pub fn contains(&self, px: &PixelPoint) -> bool {
        px.u >= 0.0
            && px.v >= 0.0
            && px.u <= (self.width - 1) as f64
            && px.v <= (self.height - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Projects a world point through a pinhole camera.
///
/// Poses tagged camera-to-world are inverted first.
pub fn project(
    k: &CameraIntrinsics,
    pose: &RigidPose,
    p: &Vec3,
) -> Result<PixelPoint, GeometryError> {
    let pc = pose.world_to_camera_point(p);
    if pc.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    Ok(PixelPoint::new(
        k.fx * pc.x / pc.z + k.cx,
        k.fy * pc.y / pc.z + k.cy,
    ))
}

/// World-frame ray from the camera center through `px`.
pub fn ray_from_pixel(k: &CameraIntrinsics, pose: &RigidPose, px: &PixelPoint) -> Ray {
    let cw = pose.to_camera_to_world();
    let dir = cw.rotation * k.unproject(px);
    Ray {
        origin: cw.translation,
        direction: dir.normalize(),
    }
}

/// Intersection of a ray with a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    pub point: Vec3,
    /// Weights of the three vertices, in input order.
    pub barycentric: [f64; 3],
}

/// Möller–Trumbore ray/triangle intersection; edges count as hits.
pub fn ray_triangle_intersect(ray: &Ray, tri: &[Vec3; 3]) -> Option<TriangleHit> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = ray.direction.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() <= 1e-14 * e1.norm() * e2.norm() {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = ray.direction.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t < 0.0 {
        return None;
    }
    Some(TriangleHit {
        t,
        point: ray.at(t),
        barycentric: [1.0 - u - v, u, v],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_quat(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        UnitQuaternion::from_scaled_axis(axis * 2.0)
    }

    fn random_vec(rng: &mut impl Rng, r: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-r..r),
            rng.random_range(-r..r),
            rng.random_range(-r..r),
        )
    }

    fn random_similarity(rng: &mut impl Rng) -> Similarity {
        Similarity::new(
            random_unit_quat(rng),
            random_vec(rng, 10.0),
            rng.random_range(0.1..10.0),
        )
        .unwrap()
    }

    /// Quaternion → matrix by the explicit component formula.
    fn quat_matrix(q: &UnitQuaternion<f64>) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    #[test]
    fn similarity_identity_and_pure_scale() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Similarity::identity().apply(&p), p);
        let s = Similarity::new(UnitQuaternion::identity(), Vec3::zeros(), 2.0).unwrap();
        assert_eq!(s.apply(&Vec3::x()), Vec3::new(2.0, 0.0, 0.0));
        let inv = s.inverse();
        assert!((inv.scale - 0.5).abs() < 1e-15);
    }

    #[test]
    fn similarity_matches_matrix_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = random_similarity(&mut rng);
            let p = random_vec(&mut rng, 5.0);
            let m = quat_matrix(&t.rotation);
            let expect: Vec<f64> = (0..3)
                .map(|r| t.scale * (m[r][0] * p.x + m[r][1] * p.y + m[r][2] * p.z) + t.translation[r])
                .collect();
            let got = t.apply(&p);
            for r in 0..3 {
                assert!((got[r] - expect[r]).abs() < 1e-12, "{got:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn similarity_group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_similarity(&mut rng);
            let b = random_similarity(&mut rng);
            let c = random_similarity(&mut rng);
            let ab_c = a.compose(&b).compose(&c);
            let a_bc = a.compose(&b.compose(&c));
            let id_b = Similarity::identity().compose(&b);
            let round = a.compose(&a.inverse());
            let round2 = a.inverse().compose(&a);
            for _ in 0..100 {
                let p = random_vec(&mut rng, 5.0);
                let direct = a.apply(&b.apply(&p));
                assert!((a.compose(&b).apply(&p) - direct).norm() < 1e-9);
                assert!((ab_c.apply(&p) - a_bc.apply(&p)).norm() < 1e-9);
                assert!((id_b.apply(&p) - b.apply(&p)).norm() < 1e-9);
                assert!((round.apply(&p) - p).norm() < 1e-9);
                assert!((round2.apply(&p) - p).norm() < 1e-9);
            }
            assert!((round.scale - 1.0).abs() < 1e-9);
            assert!(round.rotation.angle() < 1e-9);
            assert!(round.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn similarity_scales_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let t = random_similarity(&mut rng);
            let p = random_vec(&mut rng, 5.0);
            let q = random_vec(&mut rng, 5.0);
            let lhs = (t.apply(&p) - t.apply(&q)).norm();
            assert!((lhs - t.scale * (p - q).norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_scale_rejected() {
        assert!(Similarity::new(UnitQuaternion::identity(), Vec3::zeros(), 0.0).is_err());
        assert!(Similarity::new(UnitQuaternion::identity(), Vec3::zeros(), -1.0).is_err());
    }

    fn test_k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn project_basic_cases() {
        let k = test_k();
        let id = RigidPose::identity();
        let p = project(&k, &id, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.u, p.v), (k.cx, k.cy));

        let k0 = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 0.0,
            cy: 0.0,
            width: 10,
            height: 10,
        };
        let p = project(&k0, &id, &Vec3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v), (50.0, 0.0));

        assert!(matches!(
            project(&k, &id, &Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn camera_to_world_pose_projects_like_its_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = test_k();
        let pose = RigidPose::new(random_unit_quat(&mut rng), random_vec(&mut rng, 1.0), PoseDirection::WorldToCamera);
        let flipped = pose.inverse();
        let p = pose.camera_to_world_point(&Vec3::new(0.3, -0.2, 4.0));
        let a = project(&k, &pose, &p).unwrap();
        let b = project(&k, &flipped, &p).unwrap();
        assert!(a.distance(&b) < 1e-9);
    }

    #[test]
    fn ray_from_pixel_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = test_k();
        for _ in 0..100 {
            let pose = RigidPose::new(
                random_unit_quat(&mut rng),
                random_vec(&mut rng, 5.0),
                PoseDirection::WorldToCamera,
            );
            let px = PixelPoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let ray = ray_from_pixel(&k, &pose, &px);
            assert!((ray.origin - pose.center()).norm() < 1e-12);
            for t in [0.1, 1.0, 7.5, 100.0] {
                let back = project(&k, &pose, &ray.at(t)).unwrap();
                assert!(back.distance(&px) < 1e-6, "{back:?} vs {px:?}");
            }
        }
        let id = RigidPose::identity();
        let axis = ray_from_pixel(&k, &id, &PixelPoint::new(k.cx, k.cy));
        assert_eq!(axis.origin, Vec3::zeros());
        assert!((axis.direction - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn look_at_points_the_optical_axis() {
        let pose = RigidPose::look_at(Vec3::new(1.0, 2.0, 8.0), Vec3::new(1.0, 2.0, 0.0), Vec3::y());
        let k = test_k();
        let c = project(&k, &pose, &Vec3::new(1.0, 2.0, 0.0)).unwrap();
        assert!((c.u - k.cx).abs() < 1e-9 && (c.v - k.cy).abs() < 1e-9);
        // world up maps to image up (smaller v)
        let up = project(&k, &pose, &Vec3::new(1.0, 3.0, 0.0)).unwrap();
        assert!(up.v < k.cy);
        let right = project(&k, &pose, &Vec3::new(2.0, 2.0, 0.0)).unwrap();
        assert!(right.u > k.cx);
    }

    #[test]
    fn ray_triangle_axis_aligned() {
        let tri = [
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(2.0, -1.0, 0.0),
            Vec3::new(-1.0, 2.0, 0.0),
        ];
        let ray = Ray::new(Vec3::new(0.0, 0.0, -1.0), Vec3::z()).unwrap();
        let hit = ray_triangle_intersect(&ray, &tri).unwrap();
        assert!((hit.t - 1.0).abs() < 1e-15);
        assert!(hit.point.norm() < 1e-15);
        let back = Ray::new(Vec3::new(0.0, 0.0, -1.0), -Vec3::z()).unwrap();
        assert!(ray_triangle_intersect(&back, &tri).is_none());
    }

    /// Two-step oracle: intersect the supporting plane, then compute
    /// barycentrics from sub-triangle areas.
    fn oracle_intersect(ray: &Ray, tri: &[Vec3; 3]) -> Option<Vec3> {
        let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        let denom = n.dot(&ray.direction);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(tri[0] - ray.origin)) / denom;
        if t < 0.0 {
            return None;
        }
        let p = ray.at(t);
        let nn = n.norm_squared();
        let weight = |a: &Vec3, b: &Vec3| (a - p).cross(&(b - p)).dot(&n) / nn;
        let w0 = weight(&tri[1], &tri[2]);
        let w1 = weight(&tri[2], &tri[0]);
        let w2 = weight(&tri[0], &tri[1]);
        if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
            return None;
        }
        Some(p)
    }

    #[test]
    fn ray_triangle_matches_plane_then_barycentric_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut hits = 0;
        for _ in 0..1000 {
            let tri = [
                random_vec(&mut rng, 2.0),
                random_vec(&mut rng, 2.0),
                random_vec(&mut rng, 2.0),
            ];
            let origin = random_vec(&mut rng, 5.0);
            let target = random_vec(&mut rng, 1.5);
            let ray = Ray::through(origin, target).unwrap();
            let got = ray_triangle_intersect(&ray, &tri);
            let expect = oracle_intersect(&ray, &tri);
            assert_eq!(got.is_some(), expect.is_some());
            if let (Some(h), Some(p)) = (got, expect) {
                hits += 1;
                assert!((h.point - p).norm() < 1e-9);
                let sum: f64 = h.barycentric.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(h.barycentric.iter().all(|w| (0.0..=1.0).contains(w)));
                let plane = PlaneParams::from_point_normal(&tri[0], &(tri[1] - tri[0]).cross(&(tri[2] - tri[0]))).unwrap();
                assert!(plane.distance(&h.point).abs() < 1e-9);
            }
        }
        assert!(hits > 100, "too few hits to be meaningful: {hits}");
    }

    #[test]
    fn plane_distance_cases() {
        let z0 = PlaneParams::new(0.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(point_plane_distance(&z0, &Vec3::new(5.0, 5.0, 0.0)), 0.0);
        assert_eq!(point_plane_distance(&z0, &Vec3::new(0.0, 0.0, 3.0)), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let pts = [
                random_vec(&mut rng, 3.0),
                random_vec(&mut rng, 3.0),
                random_vec(&mut rng, 3.0),
            ];
            let n = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
            let plane = PlaneParams::from_point_normal(&pts[0], &n).unwrap();
            assert!((plane.normal().norm() - 1.0).abs() < 1e-9);
            for p in &pts {
                assert!(plane.distance(p).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mesh_validation() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]]).is_ok());
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(GeometryError::VertexOutOfRange { vertex: 3, .. })
        ));
        assert!(matches!(
            TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0], vec![[0, 1, 2]]),
            Err(GeometryError::DegenerateTriangle(0))
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).is_ok());
    }
}
