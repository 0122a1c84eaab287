//! Deterministic synthetic scenes with known ground truth.
//!
//! [`FacadeScene`] is a two-wall building with a grid of windows, a
//! lawnmower camera path, ray-traced keyframe images and a SLAM-style map
//! expressed in a hidden similarity frame. [`labeled_plane_cloud`] produces
//! a point cloud with known plane membership for plane extraction.

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    project, ray_from_pixel, CameraIntrinsics, PixelPoint, PlaneParams, Ray, RigidPose, Similarity, TriangleMesh,
    Vec3,
};
use crate::raster::RgbImage;
use crate::registration::align_map;
use crate::spatial::{Keyframe, KeyframeId, MapPoint};

/// As-built window width, meters (6.6 ft).
pub const WINDOW_WIDTH_M: f64 = 2.01168;
/// As-built window height, meters (6 ft).
pub const WINDOW_HEIGHT_M: f64 = 1.8288;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FacadeSpec {
    pub window_rows: usize,
    pub window_cols: usize,
    pub margin_m: f64,
    pub column_gap_m: f64,
    pub row_gap_m: f64,
    /// Depth of the side wall at the right end of the facade.
    pub side_depth_m: f64,
    pub camera_distance_m: f64,
    /// Spacing between consecutive keyframes along the facade.
    pub keyframe_step_m: f64,
    pub side_keyframe_step_m: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal_px: f64,
    /// Samples per pixel along each axis.
    pub supersampling: u32,
    pub point_spacing_m: f64,
    pub point_noise_m: f64,
    /// Scale of the hidden SLAM frame relative to meters.
    pub slam_scale: f64,
    pub seed: u64,
}

impl Default for FacadeSpec {
    fn default() -> Self {
        Self {
            window_rows: 3,
            window_cols: 5,
            margin_m: 1.0,
            column_gap_m: 1.2,
            row_gap_m: 1.4,
            side_depth_m: 6.0,
            camera_distance_m: 7.0,
            // 600 px * 0.49 m / 7 m = 42 px of disparity, an exact integer
            keyframe_step_m: 0.49,
            side_keyframe_step_m: 0.98,
            image_width: 640,
            image_height: 480,
            focal_px: 600.0,
            supersampling: 2,
            point_spacing_m: 0.25,
            point_noise_m: 0.003,
            slam_scale: 0.37,
            seed: 7,
        }
    }
}

/// A window on the front wall; corners run clockwise from the top-left as
/// seen from outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacadeWindow {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub corners: [Vec3; 4],
    pub center: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Front,
    Side,
    Ground,
    Sky,
}

#[derive(Debug, Clone)]
pub struct FacadeScene {
    pub spec: FacadeSpec,
    pub width_m: f64,
    pub height_m: f64,
    pub windows: Vec<FacadeWindow>,
    /// CAD model in meters; groups `front` and `side`.
    pub mesh: TriangleMesh,
    pub intrinsics: CameraIntrinsics,
    /// Keyframes with model-frame poses.
    pub truth_keyframes: Vec<Keyframe>,
    /// Map points in the model frame.
    pub truth_points: Vec<MapPoint>,
    /// The same keyframes and points as a SLAM system would report them.
    pub slam_keyframes: Vec<Keyframe>,
    pub slam_points: Vec<MapPoint>,
    /// Maps SLAM coordinates into the model frame.
    pub slam_to_model: Similarity,
    /// Four model-space window corners and their rounded pixels in keyframe 1.
    pub registration_model_clicks: [Vec3; 4],
    pub registration_image_clicks: [PixelPoint; 4],
}

fn lattice(seed: u64, i: i64, j: i64) -> f64 {
    let mut h = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h % 4096) as f64 / 4095.0
}

/// Bilinear value noise in [0, 1] with `cell`-sized lattice spacing.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (i, j) = (gx.floor() as i64, gy.floor() as i64);
    let (fx, fy) = (gx - gx.floor(), gy - gy.floor());
    lattice(seed, i, j) * (1.0 - fx) * (1.0 - fy)
        + lattice(seed, i + 1, j) * fx * (1.0 - fy)
        + lattice(seed, i, j + 1) * (1.0 - fx) * fy
        + lattice(seed, i + 1, j + 1) * fx * fy
}

impl FacadeScene {
    pub fn new(spec: FacadeSpec) -> Self {
        let cols = spec.window_cols as f64;
        let rows = spec.window_rows as f64;
        let width_m = 2.0 * spec.margin_m + cols * WINDOW_WIDTH_M + (cols - 1.0) * spec.column_gap_m;
        let height_m = 2.0 * spec.margin_m + rows * WINDOW_HEIGHT_M + (rows - 1.0) * spec.row_gap_m;

        let mut windows = Vec::new();
        for row in 0..spec.window_rows {
            for col in 0..spec.window_cols {
                let x0 = spec.margin_m + col as f64 * (WINDOW_WIDTH_M + spec.column_gap_m);
                let y0 = spec.margin_m + row as f64 * (WINDOW_HEIGHT_M + spec.row_gap_m);
                let (x1, y1) = (x0 + WINDOW_WIDTH_M, y0 + WINDOW_HEIGHT_M);
                windows.push(FacadeWindow {
                    id: windows.len(),
                    row,
                    col,
                    corners: [
                        Vec3::new(x0, y1, 0.0),
                        Vec3::new(x1, y1, 0.0),
                        Vec3::new(x1, y0, 0.0),
                        Vec3::new(x0, y0, 0.0),
                    ],
                    center: Vec3::new(0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.0),
                });
            }
        }

        let intrinsics = CameraIntrinsics::new(
            spec.focal_px,
            spec.focal_px,
            (spec.image_width as f64 - 1.0) / 2.0,
            (spec.image_height as f64 - 1.0) / 2.0,
            spec.image_width,
            spec.image_height,
        )
        .expect("facade intrinsics are valid");

        let mut scene = Self {
            spec,
            width_m,
            height_m,
            mesh: TriangleMesh::default(),
            windows,
            intrinsics,
            truth_keyframes: Vec::new(),
            truth_points: Vec::new(),
            slam_keyframes: Vec::new(),
            slam_points: Vec::new(),
            slam_to_model: Similarity::identity(),
            registration_model_clicks: [Vec3::zeros(); 4],
            registration_image_clicks: [PixelPoint::new(0.0, 0.0); 4],
        };
        scene.mesh = scene.build_mesh();
        scene.truth_keyframes = scene.camera_path();
        scene.truth_points = scene.map_points();

        let first = scene.truth_keyframes[0].pose.to_world_to_camera();
        let model_to_first = Similarity::new(first.rotation, first.translation, 1.0).expect("unit scale");
        let slam_from_model = Similarity::new(UnitQuaternion::identity(), Vec3::zeros(), spec.slam_scale)
            .expect("positive scale")
            .compose(&model_to_first);
        let (points, keyframes) = align_map(&scene.truth_points, &scene.truth_keyframes, &slam_from_model);
        scene.slam_points = points;
        scene.slam_keyframes = keyframes;
        scene.slam_to_model = slam_from_model.inverse();

        let window = scene.windows[0];
        scene.registration_model_clicks = window.corners;
        scene.registration_image_clicks = scene.clicks(1, &window.corners);
        scene
    }

    /// Front wall meshed on the grid of window edges and centers, so that
    /// every window corner and center is a vertex; side wall as one quad.
    fn build_mesh(&self) -> TriangleMesh {
        let mut xs = vec![0.0, self.width_m];
        let mut ys = vec![0.0, self.height_m];
        for w in &self.windows {
            xs.extend([w.corners[0].x, w.center.x, w.corners[1].x]);
            ys.extend([w.corners[2].y, w.center.y, w.corners[0].y]);
        }
        let sort = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        };
        sort(&mut xs);
        sort(&mut ys);
        let mut vertices = Vec::new();
        for y in &ys {
            for x in &xs {
                vertices.push(Vec3::new(*x, *y, 0.0));
            }
        }
        let nx = xs.len();
        let mut triangles = Vec::new();
        for j in 0..ys.len() - 1 {
            for i in 0..nx - 1 {
                let (a, b, c, d) = (j * nx + i, j * nx + i + 1, (j + 1) * nx + i + 1, (j + 1) * nx + i);
                // counter-clockwise seen from +z, where the cameras are
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let front_count = triangles.len();
        let base = vertices.len();
        let (w, h, depth) = (self.width_m, self.height_m, self.spec.side_depth_m);
        vertices.extend([
            Vec3::new(w, 0.0, 0.0),
            Vec3::new(w, 0.0, -depth),
            Vec3::new(w, h, -depth),
            Vec3::new(w, h, 0.0),
        ]);
        // counter-clockwise seen from +x
        triangles.push([base, base + 1, base + 2]);
        triangles.push([base, base + 2, base + 3]);
        let mut mesh = TriangleMesh::new(vertices, triangles).expect("facade mesh is valid");
        mesh.groups = vec!["front".into(), "side".into()];
        mesh.triangle_groups = (0..mesh.triangles.len()).map(|i| Some(usize::from(i >= front_count))).collect();
        mesh
    }

    fn row_heights(&self) -> Vec<f64> {
        (0..self.spec.window_rows)
            .map(|r| self.spec.margin_m + r as f64 * (WINDOW_HEIGHT_M + self.spec.row_gap_m) + WINDOW_HEIGHT_M / 2.0)
            .collect()
    }

    /// Serpentine passes in front of the facade, then passes along the side.
    fn camera_path(&self) -> Vec<Keyframe> {
        let s = &self.spec;
        let steps = (self.width_m / s.keyframe_step_m).floor() as usize;
        let mut centers = Vec::new();
        for (r, y) in self.row_heights().into_iter().enumerate() {
            let mut row: Vec<(Vec3, Vec3)> = (0..=steps)
                .map(|i| {
                    let c = Vec3::new(i as f64 * s.keyframe_step_m, y, s.camera_distance_m);
                    (c, -Vec3::z())
                })
                .collect();
            if r % 2 == 1 {
                row.reverse();
            }
            centers.extend(row);
        }
        let side_steps = (s.side_depth_m / s.side_keyframe_step_m).floor() as usize;
        for y in self.row_heights() {
            for i in 0..=side_steps {
                let c = Vec3::new(self.width_m + s.camera_distance_m, y, -(i as f64) * s.side_keyframe_step_m);
                centers.push((c, -Vec3::x()));
            }
        }
        centers
            .into_iter()
            .enumerate()
            .map(|(i, (c, forward))| Keyframe {
                id: i as KeyframeId + 1,
                pose: RigidPose::look_at(c, c + forward, Vec3::y()),
                image: format!("keyframes/{:06}.png", i + 1),
                intrinsics: self.intrinsics,
            })
            .collect()
    }

    fn first_hit(&self, ray: &Ray) -> (Surface, f64, Vec3) {
        let mut best = (Surface::Sky, f64::INFINITY, Vec3::zeros());
        let mut consider = |surface, t: f64| {
            if t > 1e-9 && t < best.1 {
                best = (surface, t, ray.at(t));
            }
        };
        if ray.direction.z.abs() > 1e-12 {
            let t = -ray.origin.z / ray.direction.z;
            let p = ray.at(t);
            if (0.0..=self.width_m).contains(&p.x) && (0.0..=self.height_m).contains(&p.y) {
                consider(Surface::Front, t);
            }
        }
        if ray.direction.x.abs() > 1e-12 {
            let t = (self.width_m - ray.origin.x) / ray.direction.x;
            let p = ray.at(t);
            if (-self.spec.side_depth_m..=0.0).contains(&p.z) && (0.0..=self.height_m).contains(&p.y) {
                consider(Surface::Side, t);
            }
        }
        if ray.direction.y < -1e-12 {
            consider(Surface::Ground, -ray.origin.y / ray.direction.y);
        }
        best
    }

    fn window_at(&self, p: &Vec3) -> bool {
        self.windows.iter().any(|w| {
            p.x >= w.corners[0].x && p.x <= w.corners[1].x && p.y >= w.corners[2].y && p.y <= w.corners[0].y
        })
    }

    /// Scene intensity seen along a ray.
    fn shade(&self, ray: &Ray) -> f64 {
        let seed = self.spec.seed;
        match self.first_hit(ray) {
            (Surface::Front, _, p) if self.window_at(&p) => 20.0 + 40.0 * value_noise(seed ^ 1, p.x, p.y, 0.03),
            (Surface::Front, _, p) => 150.0 + 80.0 * value_noise(seed, p.x, p.y, 0.03),
            (Surface::Side, _, p) => 150.0 + 80.0 * value_noise(seed ^ 2, p.z, p.y, 0.03),
            (Surface::Ground, _, p) => 120.0 + 40.0 * value_noise(seed ^ 3, p.x, p.z, 0.2),
            (Surface::Sky, ..) => 235.0,
        }
    }

    pub fn truth_keyframe(&self, id: KeyframeId) -> Option<&Keyframe> {
        self.truth_keyframes.iter().find(|k| k.id == id)
    }

    /// Supersampled render of keyframe `id`.
    pub fn render(&self, id: KeyframeId) -> Option<RgbImage> {
        let kf = self.truth_keyframe(id)?;
        let n = self.spec.supersampling.max(1);
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let values: Vec<u8> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let mut acc = 0.0;
                for sy in 0..n {
                    for sx in 0..n {
                        let px = PixelPoint::new(
                            x as f64 - 0.5 + (sx as f64 + 0.5) / n as f64,
                            y as f64 - 0.5 + (sy as f64 + 0.5) / n as f64,
                        );
                        acc += self.shade(&ray_from_pixel(&self.intrinsics, &kf.pose, &px));
                    }
                }
                (acc / (n * n) as f64).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Some(RgbImage::from_fn(w, h, |x, y| {
            let v = values[(y * w + x) as usize];
            [v, v, v]
        }))
    }

    fn visible_from(&self, kf: &Keyframe, p: &Vec3) -> Option<PixelPoint> {
        let px = project(&self.intrinsics, &kf.pose, p).ok()?;
        if !self.intrinsics.contains(&px) {
            return None;
        }
        let ray = Ray::through(kf.pose.center(), *p).ok()?;
        let (_, t, _) = self.first_hit(&ray);
        ((t - (p - kf.pose.center()).norm()).abs() < 1e-6).then_some(px)
    }

    /// Wall points on a jittered grid plus one point at every window center.
    /// Each point is credited to the first keyframe that sees it within the
    /// central half of its image.
    fn map_points(&self) -> Vec<MapPoint> {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let noise = Normal::new(0.0, s.point_noise_m).expect("valid noise");
        let jitter = 0.3 * s.point_spacing_m;
        let mut raw = Vec::new();
        for w in &self.windows {
            raw.push(w.center);
        }
        let grid = |extent: f64| (extent / s.point_spacing_m).floor() as usize;
        for j in 0..=grid(self.height_m) {
            for i in 0..=grid(self.width_m) {
                let x = (i as f64 * s.point_spacing_m + rng.random_range(-jitter..jitter)).clamp(0.0, self.width_m);
                let y = (j as f64 * s.point_spacing_m + rng.random_range(-jitter..jitter)).clamp(0.0, self.height_m);
                let p = Vec3::new(x, y, 0.0);
                // keep window centers unambiguous for spatial queries
                if self.windows.iter().all(|w| (w.center - p).norm() > 0.4 * s.point_spacing_m) {
                    raw.push(p);
                }
            }
            for i in 0..=grid(s.side_depth_m) {
                let z = -(i as f64 * s.point_spacing_m + rng.random_range(-jitter..jitter)).clamp(0.0, s.side_depth_m);
                let y = (j as f64 * s.point_spacing_m + rng.random_range(-jitter..jitter)).clamp(0.0, self.height_m);
                raw.push(Vec3::new(self.width_m, y, z));
            }
        }
        let (cx, cy) = (self.intrinsics.cx, self.intrinsics.cy);
        let (qw, qh) = (self.intrinsics.width as f64 / 4.0, self.intrinsics.height as f64 / 4.0);
        let mut points = Vec::new();
        for p in raw {
            let source = self
                .truth_keyframes
                .iter()
                .find(|kf| {
                    self.visible_from(kf, &p).is_some_and(|px| (px.u - cx).abs() <= qw && (px.v - cy).abs() <= qh)
                })
                .or_else(|| self.truth_keyframes.iter().find(|kf| self.visible_from(kf, &p).is_some()));
            let Some(source) = source else { continue };
            let normal = if p.x == self.width_m && p.z != 0.0 { Vec3::x() } else { Vec3::z() };
            points.push(MapPoint {
                position: p + normal * noise.sample(&mut rng),
                index: points.len(),
                source_keyframe: source.id,
            });
        }
        points
    }

    /// Rounded pixel positions of model points in keyframe `id`.
    pub fn clicks<const N: usize>(&self, id: KeyframeId, points: &[Vec3; N]) -> [PixelPoint; N] {
        let kf = self.truth_keyframe(id).expect("keyframe exists");
        points.map(|p| {
            let px = project(&self.intrinsics, &kf.pose, &p).expect("point in front of camera");
            PixelPoint::new(px.u.round(), px.v.round())
        })
    }

    /// Keyframe a spatial query at the window center should return: the
    /// source of the map point nearest that center.
    pub fn expected_keyframe(&self, window: &FacadeWindow) -> KeyframeId {
        self.truth_points
            .iter()
            .min_by(|a, b| {
                (a.position - window.center)
                    .norm_squared()
                    .total_cmp(&(b.position - window.center).norm_squared())
                    .then(a.index.cmp(&b.index))
            })
            .map(|p| p.source_keyframe)
            .expect("scene has points")
    }

    /// Whether all four corners of `window` are inside keyframe `id`.
    pub fn window_fully_visible(&self, id: KeyframeId, window: &FacadeWindow) -> bool {
        let Some(kf) = self.truth_keyframe(id) else { return false };
        window.corners.iter().all(|c| self.visible_from(kf, c).is_some())
    }

    pub fn front_plane(&self) -> PlaneParams {
        PlaneParams::new(0.0, 0.0, 1.0, 0.0).expect("unit normal")
    }
}

/// Point cloud on three mutually perpendicular 4 m x 4 m patches, with
/// Gaussian noise along each normal, plus uniform outliers in a surrounding
/// box. The patches lie on the coordinate planes but stay 1 m clear of each
/// other, so no point is within inlier range of a second patch. `labels[i]` is the patch of point `i` or `None`.
#[derive(Debug, Clone)]
pub struct LabeledCloud {
    pub points: Vec<MapPoint>,
    pub labels: Vec<Option<usize>>,
    pub planes: [PlaneParams; 3],
}

pub fn labeled_plane_cloud(seed: u64, per_plane: usize, outliers: usize, sigma: f64) -> LabeledCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    let planes = [
        PlaneParams::new(1.0, 0.0, 0.0, 0.0).expect("unit"),
        PlaneParams::new(0.0, 1.0, 0.0, 0.0).expect("unit"),
        PlaneParams::new(0.0, 0.0, 1.0, 0.0).expect("unit"),
    ];
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for axis in 0..3 {
        for _ in 0..per_plane {
            let mut p = Vec3::new(rng.random_range(1.0..5.0), rng.random_range(1.0..5.0), rng.random_range(1.0..5.0));
            p[axis] = noise.sample(&mut rng);
            positions.push(p);
            labels.push(Some(axis));
        }
    }
    for _ in 0..outliers {
        positions.push(Vec3::new(rng.random_range(-1.0..6.0), rng.random_range(-1.0..6.0), rng.random_range(-1.0..6.0)));
        labels.push(None);
    }
    // shuffle so that plane order carries no information
    let mut order: Vec<usize> = (0..positions.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let points = order
        .iter()
        .enumerate()
        .map(|(index, &o)| MapPoint { position: positions[o], index, source_keyframe: 0 })
        .collect();
    LabeledCloud { points, labels: order.iter().map(|&o| labels[o]).collect(), planes }
}
