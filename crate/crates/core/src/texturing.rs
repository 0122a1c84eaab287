//! Plane textures from registered keyframes.
//!
//! Instead of feature-based panorama stitching, each selected keyframe is
//! rectified onto the plane through its known pose and the rectified images
//! are blended with per-keyframe cosine weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, PlaneParams, TriangleMesh, Vec3};
use crate::raster::RgbImage;
use crate::spatial::{Keyframe, KeyframeId, SpatialDatabase};

/// Polygon vertices may deviate from their plane by at most this much.
pub const PLANARITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TexturingError {
    #[error("camera of keyframe {keyframe} lies on the plane")]
    CameraOnPlane { keyframe: KeyframeId },
    #[error("invalid boundary {id}: {reason}")]
    InvalidBoundary { id: String, reason: String },
    #[error("orthophotos do not share a frame")]
    FrameMismatch,
    #[error("cannot load image of keyframe {keyframe}: {message}")]
    ImageLoad { keyframe: KeyframeId, message: String },
    #[error("invalid texturing config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TexturingConfig {
    pub pixels_per_meter: f64,
    /// Fitted planes within this angle of a boundary plane belong to it.
    pub plane_match_angle_deg: f64,
    /// ... and within this offset, meters.
    pub plane_match_offset_m: f64,
    /// Keep every n-th eligible keyframe.
    pub keyframe_stride: usize,
}

impl Default for TexturingConfig {
    fn default() -> Self {
        Self {
            pixels_per_meter: 100.0,
            plane_match_angle_deg: 5.0,
            plane_match_offset_m: 0.25,
            keyframe_stride: 10,
        }
    }
}

impl TexturingConfig {
    pub fn validate(&self) -> Result<(), TexturingError> {
        if !(self.pixels_per_meter > 0.0 && self.pixels_per_meter.is_finite()) {
            return Err(TexturingError::InvalidConfig("pixels_per_meter must be positive".into()));
        }
        if !(self.plane_match_angle_deg >= 0.0 && self.plane_match_offset_m >= 0.0) {
            return Err(TexturingError::InvalidConfig("plane match tolerances must be non-negative".into()));
        }
        if self.keyframe_stride == 0 {
            return Err(TexturingError::InvalidConfig("keyframe_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Planar face of the CAD model to be textured. The plane normal points to
/// the side the face is viewed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneBoundary {
    pub id: String,
    pub plane: PlaneParams,
    pub polygon: Vec<Vec3>,
}

impl PlaneBoundary {
    pub fn new(id: impl Into<String>, plane: PlaneParams, polygon: Vec<Vec3>) -> Result<Self, TexturingError> {
        let b = Self { id: id.into(), plane, polygon };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), TexturingError> {
        let fail = |reason: &str| TexturingError::InvalidBoundary { id: self.id.clone(), reason: reason.into() };
        if self.polygon.len() < 3 {
            return Err(fail("fewer than 3 vertices"));
        }
        if self.polygon.iter().any(|p| self.plane.distance(p).abs() > PLANARITY_TOLERANCE) {
            return Err(fail("vertex off the plane"));
        }
        let frame = InPlane::new(&self.plane, &self.polygon[0]);
        let flat: Vec<[f64; 2]> = self.polygon.iter().map(|p| frame.coords(p)).collect();
        if signed_area(&flat).abs() < 1e-12 {
            return Err(fail("zero area"));
        }
        if !is_simple(&flat) {
            return Err(fail("polygon self-intersects"));
        }
        Ok(())
    }
}

/// Orthonormal in-plane axes: `u` runs left to right and `v` top to bottom
/// when the plane is viewed from its normal side with +Y up.
#[derive(Debug, Clone, Copy)]
struct InPlane {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
}

impl InPlane {
    fn new(plane: &PlaneParams, origin: &Vec3) -> Self {
        let n = plane.normal();
        let mut up = Vec3::y();
        if up.cross(&n).norm() < 1e-6 {
            // horizontal plane: fall back to +Z as "up"
            up = Vec3::z();
        }
        let u = up.cross(&n).normalize();
        let v = u.cross(&n);
        Self { origin: *origin, u, v }
    }

    fn coords(&self, p: &Vec3) -> [f64; 2] {
        let d = p - self.origin;
        [d.dot(&self.u), d.dot(&self.v)]
    }
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1]).sum::<f64>() / 2.0
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Ear-clipping triangulation of a simple polygon; triangles are returned
/// with the polygon's own winding.
pub fn triangulate_polygon(poly: &[[f64; 2]]) -> Vec<[usize; 3]> {
    let ccw = signed_area(poly) > 0.0;
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut out = Vec::with_capacity(poly.len().saturating_sub(2));
    let convex = |a: usize, b: usize, c: usize| {
        let o = orient(poly[a], poly[b], poly[c]);
        if ccw { o > 0.0 } else { o < 0.0 }
    };
    let inside = |p: [f64; 2], a: usize, b: usize, c: usize| {
        let (o1, o2, o3) = (orient(poly[a], poly[b], p), orient(poly[b], poly[c], p), orient(poly[c], poly[a], p));
        if ccw { o1 >= 0.0 && o2 >= 0.0 && o3 >= 0.0 } else { o1 <= 0.0 && o2 <= 0.0 && o3 <= 0.0 }
    };
    while idx.len() > 3 {
        let m = idx.len();
        let ear = (0..m).find(|&i| {
            let (a, b, c) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            convex(a, b, c)
                && idx.iter().all(|&q| q == a || q == b || q == c || !inside(poly[q], a, b, c))
        });
        // a simple polygon always has an ear; the fallback only guards bad input
        let i = ear.unwrap_or(0);
        out.push([idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]]);
        idx.remove(i);
    }
    if idx.len() == 3 {
        out.push([idx[0], idx[1], idx[2]]);
    }
    out
}

/// Pixel grid laid on a plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoFrame {
    /// Corner of pixel (0, 0).
    pub origin: Vec3,
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    pub normal: Vec3,
    pub meters_per_pixel: f64,
    pub width: u32,
    pub height: u32,
}

impl OrthoFrame {
    /// Smallest grid at `pixels_per_meter` covering the boundary polygon.
    pub fn for_boundary(boundary: &PlaneBoundary, pixels_per_meter: f64) -> Self {
        let axes = InPlane::new(&boundary.plane, &boundary.plane.project_point(&boundary.polygon[0]));
        let flat: Vec<[f64; 2]> = boundary.polygon.iter().map(|p| axes.coords(p)).collect();
        let min_u = flat.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
        let max_u = flat.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_v = flat.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min);
        let max_v = flat.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max);
        let mpp = 1.0 / pixels_per_meter;
        // tiny slack so exact multiples do not gain a sliver column
        let cells = |extent: f64| ((extent / mpp) - 1e-9).ceil().max(1.0) as u32;
        Self {
            origin: axes.origin + axes.u * min_u + axes.v * min_v,
            u_axis: axes.u,
            v_axis: axes.v,
            normal: boundary.plane.normal(),
            meters_per_pixel: mpp,
            width: cells(max_u - min_u),
            height: cells(max_v - min_v),
        }
    }

    /// Plane point at the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: u32, row: u32) -> Vec3 {
        self.origin
            + self.u_axis * ((col as f64 + 0.5) * self.meters_per_pixel)
            + self.v_axis * ((row as f64 + 0.5) * self.meters_per_pixel)
    }

    /// Texture coordinates in `[0, 1]`, with v pointing up.
    pub fn uv(&self, p: &Vec3) -> [f64; 2] {
        let d = p - self.origin;
        let u = d.dot(&self.u_axis) / (self.width as f64 * self.meters_per_pixel);
        let v = d.dot(&self.v_axis) / (self.height as f64 * self.meters_per_pixel);
        [u.clamp(0.0, 1.0), (1.0 - v).clamp(0.0, 1.0)]
    }
}

/// One keyframe resampled onto an ortho frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthophoto {
    pub frame: OrthoFrame,
    pub keyframe: KeyframeId,
    /// Row-major samples; meaningless where the weight is zero.
    pub colors: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Samples `image` at every plane pixel. Pixels outside the image or behind
/// the camera get weight zero; all others get the cosine between the
/// camera's optical axis and the plane normal, or zero when the camera sees
/// the back of the plane.
pub fn rectify_to_plane(kf: &Keyframe, image: &RgbImage, frame: &OrthoFrame) -> Result<Orthophoto, TexturingError> {
    let center = kf.pose.center();
    let height_above = (center - frame.origin).dot(&frame.normal);
    if height_above.abs() < 1e-9 {
        return Err(TexturingError::CameraOnPlane { keyframe: kf.id });
    }
    let n = (frame.width * frame.height) as usize;
    let mut colors = vec![[0.0; 3]; n];
    let mut weights = vec![0.0; n];
    let axis = kf.pose.to_camera_to_world().rotation * Vec3::z();
    let weight = (-axis).dot(&frame.normal);
    if height_above > 0.0 && weight > 0.0 {
        for row in 0..frame.height {
            for col in 0..frame.width {
                let p = frame.pixel_center(col, row);
                let Ok(px) = project(&kf.intrinsics, &kf.pose, &p) else {
                    continue;
                };
                if let Some(c) = image.sample_bilinear(px.u, px.v) {
                    let i = (row * frame.width + col) as usize;
                    colors[i] = c;
                    weights[i] = weight;
                }
            }
        }
    }
    Ok(Orthophoto { frame: *frame, keyframe: kf.id, colors, weights })
}

/// Blended texture; alpha is 0 where no keyframe contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub frame: OrthoFrame,
    pub rgba: Vec<[u8; 4]>,
}

impl Texture {
    pub fn transparent_count(&self) -> usize {
        self.rgba.iter().filter(|p| p[3] == 0).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.rgba.is_empty() {
            return 0.0;
        }
        1.0 - self.transparent_count() as f64 / self.rgba.len() as f64
    }
}

/// Weighted per-pixel average, accumulated in input order.
pub fn composite(frame: &OrthoFrame, orthos: &[Orthophoto]) -> Result<Texture, TexturingError> {
    if orthos.iter().any(|o| o.frame != *frame) {
        return Err(TexturingError::FrameMismatch);
    }
    let n = (frame.width * frame.height) as usize;
    let rgba = (0..n)
        .map(|i| {
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for o in orthos {
                let w = o.weights[i];
                if w > 0.0 {
                    for k in 0..3 {
                        acc[k] += w * o.colors[i][k];
                    }
                    total += w;
                }
            }
            if total > 0.0 {
                let c = acc.map(|a| (a / total).round().clamp(0.0, 255.0) as u8);
                [c[0], c[1], c[2], 255]
            } else {
                [0, 0, 0, 0]
            }
        })
        .collect();
    Ok(Texture { frame: *frame, rgba })
}

fn plane_matches(fitted: &PlaneParams, boundary: &PlaneParams, cfg: &TexturingConfig) -> bool {
    let (nf, nb) = (fitted.normal(), boundary.normal());
    let dot = nf.dot(&nb);
    let aligned = if dot < 0.0 { fitted.flipped() } else { *fitted };
    let angle = dot.abs().clamp(0.0, 1.0).acos().to_degrees();
    angle <= cfg.plane_match_angle_deg && (aligned.d - boundary.d).abs() <= cfg.plane_match_offset_m
}

fn clip_polygon<P: Copy>(poly: &[P], inside: impl Fn(&P) -> f64, lerp: impl Fn(&P, &P, f64) -> P) -> Vec<P> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let (a, b) = (&poly[i], &poly[(i + 1) % poly.len()]);
        let (da, db) = (inside(a), inside(b));
        if da >= 0.0 {
            out.push(*a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            out.push(lerp(a, b, da / (da - db)));
        }
    }
    out
}

/// Whether the boundary polygon covers any part of the keyframe's image.
pub fn frustum_intersects(kf: &Keyframe, polygon: &[Vec3]) -> bool {
    const NEAR: f64 = 1e-3;
    let wc = kf.pose.to_world_to_camera();
    let cam: Vec<Vec3> = polygon.iter().map(|p| wc.world_to_camera_point(p)).collect();
    let cam = clip_polygon(&cam, |p| p.z - NEAR, |a, b, t| a + (b - a) * t);
    if cam.len() < 3 {
        return false;
    }
    let k = &kf.intrinsics;
    let mut img: Vec<[f64; 2]> = cam.iter().map(|p| [k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy]).collect();
    let (w, h) = (k.width as f64 - 0.5, k.height as f64 - 0.5);
    let lerp = |a: &[f64; 2], b: &[f64; 2], t: f64| [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
    for edge in 0..4 {
        let inside = |p: &[f64; 2]| match edge {
            0 => p[0] + 0.5,
            1 => w - p[0],
            2 => p[1] + 0.5,
            _ => h - p[1],
        };
        img = clip_polygon(&img, inside, lerp);
        if img.len() < 3 {
            return false;
        }
    }
    signed_area(&img).abs() > 1e-9
}

/// Keyframes that contributed points to the boundary's plane and see the
/// polygon, sorted by id and subsampled by the configured stride.
pub fn select_keyframes_for_plane<'a>(
    db: &'a SpatialDatabase,
    boundary: &PlaneBoundary,
    cfg: &TexturingConfig,
) -> Vec<&'a Keyframe> {
    let mut sources: Vec<KeyframeId> = db
        .planes()
        .iter()
        .filter(|p| plane_matches(&p.params, &boundary.plane, cfg))
        .flat_map(|p| p.member_indices.iter())
        .filter_map(|&i| db.point_by_index(i))
        .map(|p| p.source_keyframe)
        .collect();
    sources.sort_unstable();
    sources.dedup();
    sources
        .into_iter()
        .filter_map(|id| db.keyframe(id))
        .filter(|kf| frustum_intersects(kf, &boundary.polygon))
        .step_by(cfg.keyframe_stride)
        .collect()
}

/// Faces of each named mesh group, merged into one boundary polygon per
/// group. The normal follows the counter-clockwise winding of the faces.
pub fn boundaries_from_mesh(mesh: &TriangleMesh) -> Result<Vec<PlaneBoundary>, TexturingError> {
    let mut out = Vec::new();
    for (g, name) in mesh.groups.iter().enumerate() {
        let fail = |reason: &str| TexturingError::InvalidBoundary { id: name.clone(), reason: reason.into() };
        let tris: Vec<[usize; 3]> = mesh
            .triangles
            .iter()
            .zip(&mesh.triangle_groups)
            .filter(|(_, tg)| **tg == Some(g))
            .map(|(t, _)| *t)
            .collect();
        if tris.is_empty() {
            continue;
        }
        let mut normal = Vec3::zeros();
        for t in &tris {
            let [a, b, c] = t.map(|i| mesh.vertices[i]);
            normal += (b - a).cross(&(c - a));
        }
        // directed edges not cancelled by a twin form the outline
        let mut edges: Vec<(usize, usize)> = tris.iter().flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]).collect();
        let all = edges.clone();
        edges.retain(|&(a, b)| !all.contains(&(b, a)));
        let Some(&(start, mut cur)) = edges.first() else {
            return Err(fail("group has no outline"));
        };
        let mut loop_idx = vec![start];
        while cur != start {
            if loop_idx.len() > edges.len() {
                return Err(fail("outline is not a single loop"));
            }
            loop_idx.push(cur);
            cur = match edges.iter().find(|e| e.0 == cur) {
                Some(e) => e.1,
                None => return Err(fail("outline is open")),
            };
        }
        if loop_idx.len() != edges.len() {
            return Err(fail("outline is not a single loop"));
        }
        // drop vertices in the middle of straight outline runs
        let pts: Vec<Vec3> = loop_idx.iter().map(|&i| mesh.vertices[i]).collect();
        let m = pts.len();
        let polygon: Vec<Vec3> = (0..m)
            .filter(|&i| {
                let (a, b, c) = (pts[(i + m - 1) % m], pts[i], pts[(i + 1) % m]);
                (b - a).cross(&(c - b)).norm() > 1e-12 * (b - a).norm() * (c - b).norm()
            })
            .map(|i| pts[i])
            .collect();
        let plane = PlaneParams::from_point_normal(&polygon[0], &normal).map_err(|_| fail("zero normal"))?;
        out.push(PlaneBoundary::new(name.clone(), plane, polygon)?);
    }
    Ok(out)
}

/// Textured patch for one boundary, ready for mesh export.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturedPatch {
    pub boundary_id: String,
    pub vertices: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub texture: Texture,
    pub keyframes: Vec<KeyframeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    pub patches: Vec<TexturedPatch>,
    /// Boundaries that no selected keyframe covered at all.
    pub uncovered: Vec<String>,
}

/// Selects, rectifies and blends keyframes for every boundary. `load` maps
/// a keyframe to its color image. Output is deterministic: rectification
/// runs in parallel but blending follows keyframe id order.
pub fn build_textured_model<F>(
    db: &SpatialDatabase,
    boundaries: &[PlaneBoundary],
    cfg: &TexturingConfig,
    load: F,
) -> Result<TextureAtlas, TexturingError>
where
    F: Fn(&Keyframe) -> Result<RgbImage, String> + Sync,
{
    cfg.validate()?;
    let mut patches = Vec::new();
    let mut uncovered = Vec::new();
    for b in boundaries {
        b.validate()?;
        let frame = OrthoFrame::for_boundary(b, cfg.pixels_per_meter);
        let selected = select_keyframes_for_plane(db, b, cfg);
        let orthos = selected
            .par_iter()
            .map(|kf| {
                let img = load(kf).map_err(|message| TexturingError::ImageLoad { keyframe: kf.id, message })?;
                rectify_to_plane(kf, &img, &frame)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let texture = composite(&frame, &orthos)?;
        if texture.transparent_count() == texture.rgba.len() {
            uncovered.push(b.id.clone());
            continue;
        }
        let axes = InPlane::new(&b.plane, &frame.origin);
        let flat: Vec<[f64; 2]> = b.polygon.iter().map(|p| axes.coords(p)).collect();
        patches.push(TexturedPatch {
            boundary_id: b.id.clone(),
            uvs: b.polygon.iter().map(|p| frame.uv(p)).collect(),
            triangles: triangulate_polygon(&flat),
            vertices: b.polygon.clone(),
            texture,
            keyframes: selected.iter().map(|kf| kf.id).collect(),
        });
    }
    Ok(TextureAtlas { patches, uncovered })
}
