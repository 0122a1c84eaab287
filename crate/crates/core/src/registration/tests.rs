use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::geometry::PoseDirection;
use crate::raster::GrayImage;

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap()
}

fn random_pose(rng: &mut impl Rng) -> RigidPose {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    RigidPose::new(
        UnitQuaternion::from_scaled_axis(axis * rng.random_range(0.0..std::f64::consts::PI)),
        Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ),
        PoseDirection::WorldToCamera,
    )
}

/// World point seen at a random pixel at a random depth.
fn random_visible_point(rng: &mut impl Rng, pose: &RigidPose, k: &CameraIntrinsics) -> (Vec3, PixelPoint) {
    let px = PixelPoint::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
    let depth = rng.random_range(2.0..12.0);
    let pc = k.unproject(&px) * depth;
    (pose.camera_to_world_point(&pc), px)
}

fn correspondences(rng: &mut impl Rng, pose: &RigidPose, n: usize) -> Vec<Correspondence3D2D> {
    (0..n)
        .map(|_| {
            let (model_point, image_point) = random_visible_point(rng, pose, &k());
            Correspondence3D2D { model_point, image_point }
        })
        .collect()
}

/// Camera at (0, 0, -5) looking +z at the corners of a 4.4 m x 3.2 m
/// facade that nearly fills the image.
fn facade_setup() -> (RigidPose, [Correspondence3D2D; 4]) {
    let pose = RigidPose::look_at(Vec3::new(0.0, 0.0, -5.0), Vec3::zeros(), Vec3::y());
    let corners = [
        Vec3::new(-1.9, -1.4, 0.0),
        Vec3::new(1.8, -1.3, 0.0),
        Vec3::new(1.7, 1.4, 0.0),
        Vec3::new(-1.6, 1.3, 0.0),
    ];
    let corr = corners.map(|c| Correspondence3D2D {
        model_point: c,
        image_point: project(&k(), &pose, &c).unwrap(),
    });
    (pose, corr)
}

#[test]
fn p3p_recovers_facade_pose() {
    let (truth, corr) = facade_setup();
    let sols = solve_p3p(&[corr[0], corr[1], corr[2]], &k()).unwrap();
    assert!(!sols.is_empty() && sols.len() <= 4);
    let found = sols.iter().any(|s| {
        let (angle, dist) = s.distance_to(&truth);
        angle < 1e-6 && dist < 1e-6
    });
    assert!(found, "{sols:?}");
    let chosen = register_first_keyframe(&corr, &k()).unwrap();
    let (angle, dist) = chosen.distance_to(&truth);
    assert!(angle < 1e-6 && dist < 1e-6);
    assert_eq!(chosen.direction, PoseDirection::WorldToCamera);
}

#[test]
fn p3p_collinear_is_degenerate() {
    let pose = RigidPose::look_at(Vec3::new(0.0, 0.0, -5.0), Vec3::zeros(), Vec3::y());
    let pts = [Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
    let corr = pts.map(|p| Correspondence3D2D {
        model_point: p,
        image_point: project(&k(), &pose, &p).unwrap(),
    });
    assert!(matches!(solve_p3p(&corr, &k()), Err(RegistrationError::Degenerate(_))));
}

#[test]
fn p3p_reprojection_contract_on_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut recovered = 0;
    for _ in 0..500 {
        let truth = random_pose(&mut rng);
        let corr = correspondences(&mut rng, &truth, 3);
        let sols = solve_p3p(&[corr[0], corr[1], corr[2]], &k()).unwrap();
        for s in &sols {
            for c in &corr {
                let px = project(&k(), s, &c.model_point).unwrap();
                assert!(px.distance(&c.image_point) <= P3P_REPROJECTION_TOLERANCE);
            }
        }
        if sols.iter().any(|s| {
            let (a, d) = s.distance_to(&truth);
            a < 1e-6 && d < 1e-6
        }) {
            recovered += 1;
        }
    }
    assert_eq!(recovered, 500);
}

#[test]
fn disambiguation_picks_ground_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut multi = 0;
    for _ in 0..200 {
        let truth = random_pose(&mut rng);
        let corr = correspondences(&mut rng, &truth, 4);
        let sols = solve_p3p(&[corr[0], corr[1], corr[2]], &k()).unwrap();
        if sols.len() > 1 {
            multi += 1;
        }
        let best = disambiguate_p3p(&sols, &corr[3], &k()).unwrap();
        let (a, d) = best.distance_to(&truth);
        assert!(a < 1e-6 && d < 1e-6);
    }
    assert!(multi > 0, "no configuration produced spurious roots");
}

#[test]
fn disambiguation_singleton_and_failure() {
    let (truth, corr) = facade_setup();
    assert_eq!(disambiguate_p3p(&[truth], &corr[3], &k()).unwrap(), truth);
    let behind = Correspondence3D2D {
        model_point: Vec3::new(0.4, 0.3, -20.0),
        image_point: PixelPoint::new(320.0, 240.0),
    };
    assert_eq!(
        disambiguate_p3p(&[truth], &behind, &k()),
        Err(RegistrationError::FourthPointBehindCamera)
    );
    assert_eq!(disambiguate_p3p(&[], &corr[3], &k()), Err(RegistrationError::NoSolution));
}

#[test]
fn disambiguation_tie_keeps_first() {
    let (truth, corr) = facade_setup();
    let chosen = disambiguate_p3p(&[truth, truth.inverse().inverse()], &corr[3], &k()).unwrap();
    assert_eq!(chosen, truth);
}

#[test]
fn noisy_clicks_keep_rotation_error_small() {
    let (truth, corr) = facade_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let errors: Vec<f64> = (0..500)
        .map(|_| {
            let noisy = corr.map(|c| Correspondence3D2D {
                image_point: PixelPoint::new(
                    c.image_point.u + noise.sample(&mut rng),
                    c.image_point.v + noise.sample(&mut rng),
                ),
                ..c
            });
            let pose = register_first_keyframe(&noisy, &k()).unwrap();
            pose.distance_to(&truth).0.to_degrees()
        })
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    assert!(mean < 0.5, "mean rotation error {mean} deg");
    // the fourth point must never let a spurious root through
    assert!(errors.iter().all(|e| *e < 5.0));
}

#[test]
fn triangulation_exact_and_degenerate() {
    let p = Vec3::new(1.0, 2.0, 10.0);
    let pose1 = RigidPose::identity();
    let pose2 = RigidPose::new(UnitQuaternion::from_euler_angles(0.0, -0.05, 0.0), Vec3::new(-1.0, 0.0, 0.0), PoseDirection::WorldToCamera);
    let px1 = project(&k(), &pose1, &p).unwrap();
    let px2 = project(&k(), &pose2, &p).unwrap();
    let tri = triangulate(&pose1, &pose2, &px1, &px2, &k()).unwrap();
    assert!((tri.point - p).norm() < 1e-9);
    assert!(tri.residuals.iter().all(|r| *r < 1e-6));
    assert!(matches!(
        triangulate(&pose1, &pose1, &px1, &px1, &k()),
        Err(RegistrationError::ZeroBaseline { .. })
    ));
}

#[test]
fn triangulation_noise_stays_within_ten_centimeters() {
    let p = Vec3::new(0.5, -0.3, 10.0);
    let pose1 = RigidPose::identity();
    let pose2 = RigidPose::new(UnitQuaternion::identity(), Vec3::new(-1.0, 0.0, 0.0), PoseDirection::WorldToCamera);
    let px1 = project(&k(), &pose1, &p).unwrap();
    let px2 = project(&k(), &pose2, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let errors: Vec<f64> = (0..2000)
        .map(|_| {
            let jitter = |px: &PixelPoint, rng: &mut ChaCha8Rng| {
                PixelPoint::new(px.u + noise.sample(rng), px.v + noise.sample(rng))
            };
            let a = jitter(&px1, &mut rng);
            let b = jitter(&px2, &mut rng);
            (triangulate(&pose1, &pose2, &a, &b, &k()).unwrap().point - p).norm()
        })
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    // first-order depth error: z^2 / (f * baseline) * sigma * sqrt(2) ~ 8.8 cm std
    let depth_sd = 100.0 / 800.0 * 0.5 * 2f64.sqrt();
    let expected_mean = depth_sd * (2.0 / std::f64::consts::PI).sqrt();
    assert!(mean < 0.10, "mean error {mean}");
    assert!((mean - expected_mean).abs() < 0.15 * expected_mean, "{mean} vs {expected_mean}");
}

#[test]
fn horn_noiseless_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..200 {
        let truth = Similarity::new(
            random_pose(&mut rng).rotation,
            Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
            rng.random_range(0.05..20.0),
        )
        .unwrap();
        let pairs: Vec<Correspondence3D3D> = (0..rng.random_range(3..12))
            .map(|_| {
                let p = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                Correspondence3D3D { model_point: truth.apply(&p), map_point: p }
            })
            .collect();
        let t = horn_similarity(&pairs).unwrap();
        assert!(t.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!((t.scale - truth.scale).abs() / truth.scale < 1e-12);
        assert!((t.translation - truth.translation).norm() < 1e-9);
    }
}

fn lattice(i: i64, j: i64) -> f64 {
    let mut h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h % 1024) as f64 / 1023.0
}

/// Bilinear value noise with 1.5 cm cells: a few pixels per cell at 4 m.
fn texture(x: f64, y: f64) -> u8 {
    let (gx, gy) = (x / 0.015, y / 0.015);
    let (i, j) = (gx.floor() as i64, gy.floor() as i64);
    let (fx, fy) = (gx - gx.floor(), gy - gy.floor());
    let v = lattice(i, j) * (1.0 - fx) * (1.0 - fy)
        + lattice(i + 1, j) * fx * (1.0 - fy)
        + lattice(i, j + 1) * (1.0 - fx) * fy
        + lattice(i + 1, j + 1) * fx * fy;
    (30.0 + 200.0 * v).round() as u8
}

/// Renders the z = 0 plane textured with `texture` (coordinates in meters).
fn render_plane(pose: &RigidPose) -> GrayImage {
    let k = k();
    GrayImage::from_fn(k.width, k.height, |x, y| {
        let ray = ray_from_pixel(&k, pose, &PixelPoint::new(x as f64, y as f64));
        let t = -ray.origin.z / ray.direction.z;
        let p = ray.at(t);
        texture(p.x, p.y)
    })
}

#[test]
fn model_alignment_on_two_synthetic_views() {
    // Ground-truth model frame: wall at z = 0. SLAM frame = model frame mapped by
    // the inverse of `truth`, with keyframe 1 at identity.
    let cam1 = RigidPose::look_at(Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), Vec3::y());
    // a (0.15, 0.05) m baseline at 4 m shifts the image by exactly (30, 10) px
    let cam2 = RigidPose::look_at(Vec3::new(0.15, 0.05, -4.0), Vec3::new(0.15, 0.05, 0.0), Vec3::y());
    let img1 = render_plane(&cam1);
    let img2 = render_plane(&cam2);

    // map frame: model frame scaled by 1/2.5 and expressed relative to cam1
    let model_to_cam1 = Similarity::new(cam1.rotation, cam1.translation, 1.0).unwrap();
    let slam_from_model = Similarity::new(UnitQuaternion::identity(), Vec3::zeros(), 1.0 / 2.5)
        .unwrap()
        .compose(&model_to_cam1);
    let truth = slam_from_model.inverse();
    let kf = |id, pose: &RigidPose| Keyframe {
        id,
        pose: align_pose(pose, &slam_from_model),
        image: String::new(),
        intrinsics: k(),
    };
    let kf1 = kf(1, &cam1);
    let kf2 = kf(2, &cam2);
    assert!(kf1.pose.distance_to(&RigidPose::identity()).0 < 1e-12);

    let corners = [
        Vec3::new(-0.6, -0.5, 0.0),
        Vec3::new(0.6, -0.5, 0.0),
        Vec3::new(0.6, 0.5, 0.0),
        Vec3::new(-0.6, 0.5, 0.0),
    ];
    let clicks = corners.map(|c| {
        let px = project(&k(), &cam1, &c).unwrap();
        PixelPoint::new(px.u.round(), px.v.round())
    });
    // model-space click = where the rounded pixel actually lands on the wall
    let model = clicks.map(|px| {
        let ray = ray_from_pixel(&k(), &cam1, &px);
        ray.at(-ray.origin.z / ray.direction.z)
    });
    let views = AlignmentViews { first: &kf1, first_image: &img1, second: &kf2, second_image: &img2 };
    let out = build_model_alignment(&model, &clicks, &views, &k(), &PatchMatchConfig::default()).unwrap();
    assert!((out.similarity.scale - truth.scale).abs() / truth.scale < 1e-3, "{:?} vs {:?}", out.similarity, truth);
    assert!(out.similarity.rotation.angle_to(&truth.rotation) < 1e-2);

    // identical second keyframe: matches succeed, triangulation has no baseline
    let same = AlignmentViews { first: &kf1, first_image: &img1, second: &kf1, second_image: &img1 };
    assert!(matches!(
        build_model_alignment(&model, &clicks, &same, &k(), &PatchMatchConfig::default()),
        Err(RegistrationError::ZeroBaseline { .. })
    ));

    // flat second image: every match fails, reported by index
    let flat = GrayImage::filled(640, 480, 90);
    let bad = AlignmentViews { first: &kf1, first_image: &img1, second: &kf2, second_image: &flat };
    assert_eq!(
        build_model_alignment(&model, &clicks, &bad, &k(), &PatchMatchConfig::default()),
        Err(RegistrationError::NoMatch { indices: vec![0, 1, 2, 3] })
    );

    // one click on a featureless patch
    let mut patched = img2.clone();
    let target = out.matches[2];
    for y in (target.v as u32 - 60)..(target.v as u32 + 60) {
        for x in (target.u as u32 - 60)..(target.u as u32 + 60) {
            patched.set(x, y, 100);
        }
    }
    let one = AlignmentViews { first: &kf1, first_image: &img1, second: &kf2, second_image: &patched };
    assert_eq!(
        build_model_alignment(&model, &clicks, &one, &k(), &PatchMatchConfig::default()),
        Err(RegistrationError::NoMatch { indices: vec![2] })
    );
}

fn map_points(rng: &mut impl Rng, n: usize) -> Vec<MapPoint> {
    (0..n)
        .map(|i| MapPoint {
            position: Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(4.0..9.0)),
            index: i,
            source_keyframe: (i % 3) as u32,
        })
        .collect()
}

fn keyframes(rng: &mut impl Rng) -> Vec<Keyframe> {
    (0..3)
        .map(|id| Keyframe {
            id,
            pose: RigidPose::new(
                UnitQuaternion::from_euler_angles(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0),
                Vec3::new(rng.random_range(-0.5..0.5), 0.0, 0.0),
                if id == 1 { PoseDirection::CameraToWorld } else { PoseDirection::WorldToCamera },
            ),
            image: format!("{id}.png"),
            intrinsics: k(),
        })
        .collect()
}

#[test]
fn align_map_identity_and_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let pts = map_points(&mut rng, 20);
    let kfs = keyframes(&mut rng);
    let (p2, k2) = align_map(&pts, &kfs, &Similarity::identity());
    assert_eq!(p2, pts);
    for (a, b) in k2.iter().zip(&kfs) {
        let (angle, dist) = a.pose.distance_to(&b.pose);
        assert!(angle < 1e-12 && dist < 1e-12);
        assert_eq!(a.pose.direction, b.pose.direction);
    }

    let s = Similarity::new(UnitQuaternion::identity(), Vec3::zeros(), 3.0).unwrap();
    let (p3, k3) = align_map(&pts, &kfs, &s);
    for (a, b) in k3.iter().zip(&kfs) {
        assert!((a.pose.center() - b.pose.center() * 3.0).norm() < 1e-12);
    }
    for i in 0..pts.len() {
        for j in 0..i {
            let before = (pts[i].position - pts[j].position).norm();
            let after = (p3[i].position - p3[j].position).norm();
            assert!((after - 3.0 * before).abs() < 1e-9);
        }
        assert_eq!(p3[i].index, pts[i].index);
        assert_eq!(p3[i].source_keyframe, pts[i].source_keyframe);
    }
}

#[test]
fn align_map_preserves_reprojection() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let pts = map_points(&mut rng, 200);
    let kfs = keyframes(&mut rng);
    for _ in 0..20 {
        let t = Similarity::new(
            random_pose(&mut rng).rotation,
            Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)),
            rng.random_range(0.1..10.0),
        )
        .unwrap();
        let (ap, ak) = align_map(&pts, &kfs, &t);
        for (p, q) in pts.iter().zip(&ap) {
            let kf = &kfs[p.source_keyframe as usize];
            let akf = &ak[p.source_keyframe as usize];
            let before = project(&k(), &kf.pose, &p.position).unwrap();
            let after = project(&k(), &akf.pose, &q.position).unwrap();
            assert!(before.distance(&after) < 1e-6);
        }
    }
}

