//! Perspective-three-point pose using Kneip's direct parametrization, which
//! solves for camera position and orientation through a single quartic in
//! the cosine of the angle between two intermediate frames.

use nalgebra::{Complex, Matrix3, Matrix4, Matrix6, Rotation3, UnitQuaternion, Vector6};

use super::{Correspondence3D2D, RegistrationError};
use crate::geometry::{project, CameraIntrinsics, PoseDirection, RigidPose, Vec3};

/// Every returned pose reprojects its three inputs within this many pixels.
pub const P3P_REPROJECTION_TOLERANCE: f64 = 1e-4;

/// Relative area below which three model points count as collinear.
const COLLINEAR_TOLERANCE: f64 = 1e-9;

/// Up to four world-to-camera poses consistent with three correspondences.
///
/// Roots of the quartic that are complex, outside `[-1, 1]`, place a point
/// behind the camera or fail to reproject within
/// [`P3P_REPROJECTION_TOLERANCE`] are discarded, so the result may be empty.
pub fn solve_p3p(
    corr: &[Correspondence3D2D; 3],
    k: &CameraIntrinsics,
) -> Result<Vec<RigidPose>, RegistrationError> {
    let world = [corr[0].model_point, corr[1].model_point, corr[2].model_point];
    let e01 = world[1] - world[0];
    let e02 = world[2] - world[0];
    let e12 = world[2] - world[1];
    let longest = e01.norm_squared().max(e02.norm_squared()).max(e12.norm_squared());
    if e01.cross(&e02).norm() <= COLLINEAR_TOLERANCE * longest {
        return Err(RegistrationError::Degenerate(
            "model points are collinear or coincident".into(),
        ));
    }
    let bearings = corr.map(|c| k.unproject(&c.image_point).normalize());
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if bearings[i].cross(&bearings[j]).norm() < 1e-12 {
            return Err(RegistrationError::Degenerate(format!(
                "image points {i} and {j} have identical bearings"
            )));
        }
    }

    let mut poses: Vec<RigidPose> = Vec::with_capacity(4);
    for (rotation, center) in kneip_candidates(&world, &bearings) {
        let Some(pose) = polish(&world, &bearings, rotation, center) else {
            continue;
        };
        let admissible = corr.iter().all(|c| {
            project(k, &pose, &c.model_point)
                .map(|px| px.distance(&c.image_point) <= P3P_REPROJECTION_TOLERANCE)
                .unwrap_or(false)
        });
        let duplicate = poses.iter().any(|p| {
            let (angle, dist) = p.distance_to(&pose);
            angle < 1e-9 && dist < 1e-9
        });
        if admissible && !duplicate {
            poses.push(pose);
        }
    }
    Ok(poses)
}

/// Raw (camera-to-world rotation, camera center) pairs, one per real root.
fn kneip_candidates(world: &[Vec3; 3], bearings: &[Vec3; 3]) -> Vec<(Matrix3<f64>, Vec3)> {
    let (mut p1, mut p2, p3_world) = (world[0], world[1], world[2]);
    let (mut f1, mut f2, f3_cam) = (bearings[0], bearings[1], bearings[2]);

    let camera_frame = |f1: &Vec3, f2: &Vec3| {
        let e1 = *f1;
        let e3 = f1.cross(f2).normalize();
        let e2 = e3.cross(&e1);
        Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()])
    };
    let mut t = camera_frame(&f1, &f2);
    let mut f3 = t * f3_cam;
    // theta lives in [0, pi] only when f3 points to negative z here
    if f3.z > 0.0 {
        std::mem::swap(&mut f1, &mut f2);
        std::mem::swap(&mut p1, &mut p2);
        t = camera_frame(&f1, &f2);
        f3 = t * f3_cam;
    }

    let n1 = (p2 - p1).normalize();
    let n3 = n1.cross(&(p3_world - p1)).normalize();
    let n2 = n3.cross(&n1);
    let n = Matrix3::from_rows(&[n1.transpose(), n2.transpose(), n3.transpose()]);
    let p3 = n * (p3_world - p1);

    let d12 = (p2 - p1).norm();
    let fr1 = f3.x / f3.z;
    let fr2 = f3.y / f3.z;
    let (q1, q2) = (p3.x, p3.y);
    let cos_beta = f1.dot(&f2);
    let mut b = (1.0 / (1.0 - cos_beta * cos_beta) - 1.0).max(0.0).sqrt();
    if cos_beta < 0.0 {
        b = -b;
    }

    let fr1_2 = fr1 * fr1;
    let fr2_2 = fr2 * fr2;
    let q1_2 = q1 * q1;
    let q1_3 = q1_2 * q1;
    let q1_4 = q1_3 * q1;
    let q2_2 = q2 * q2;
    let q2_3 = q2_2 * q2;
    let q2_4 = q2_3 * q2;
    let d12_2 = d12 * d12;
    let b_2 = b * b;

    let c4 = -fr2_2 * q2_4 - q2_4 * fr1_2 - q2_4;
    let c3 = 2.0 * q2_3 * d12 * b + 2.0 * fr2_2 * q2_3 * d12 * b - 2.0 * fr2 * q2_3 * fr1 * d12;
    let c2 = -fr2_2 * q2_2 * q1_2 - fr2_2 * q2_2 * d12_2 * b_2 - fr2_2 * q2_2 * d12_2
        + fr2_2 * q2_4
        + q2_4 * fr1_2
        + 2.0 * q1 * q2_2 * d12
        + 2.0 * fr1 * fr2 * q1 * q2_2 * d12 * b
        - q2_2 * q1_2 * fr1_2
        + 2.0 * q1 * q2_2 * fr2_2 * d12
        - q2_2 * d12_2 * b_2
        - 2.0 * q1_2 * q2_2;
    let c1 = 2.0 * q1_2 * q2 * d12 * b + 2.0 * fr2 * q2_3 * fr1 * d12
        - 2.0 * fr2_2 * q2_3 * d12 * b
        - 2.0 * q1 * q2 * d12_2 * b;
    let c0 = -2.0 * fr2 * q2_2 * fr1 * q1 * d12 * b + fr2_2 * q2_2 * d12_2 + 2.0 * q1_3 * d12
        - q1_2 * d12_2
        + fr2_2 * q2_2 * q1_2
        - q1_4
        - 2.0 * fr2_2 * q2_2 * q1 * d12
        + q2_2 * fr1_2 * q1_2
        + fr2_2 * q2_2 * d12_2 * b_2;

    let mut out = Vec::with_capacity(4);
    for cos_theta in real_quartic_roots([c4, c3, c2, c1, c0]) {
        if cos_theta.abs() > 1.0 + 1e-9 {
            continue;
        }
        let cos_theta = cos_theta.clamp(-1.0, 1.0);
        let cot_alpha = (-fr1 * q1 / fr2 - cos_theta * q2 + d12 * b)
            / (-fr1 * cos_theta * q2 / fr2 + q1 - d12);
        if !cot_alpha.is_finite() {
            continue;
        }
        let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
        let sin_alpha = (1.0 / (cot_alpha * cot_alpha + 1.0)).sqrt();
        let mut cos_alpha = (1.0 - sin_alpha * sin_alpha).sqrt();
        if cot_alpha < 0.0 {
            cos_alpha = -cos_alpha;
        }
        let common = d12 * (sin_alpha * b + cos_alpha);
        let c = Vec3::new(
            cos_alpha * common,
            cos_theta * sin_alpha * common,
            sin_theta * sin_alpha * common,
        );
        let center = p1 + n.transpose() * c;
        let r = Matrix3::new(
            -cos_alpha,
            -sin_alpha * cos_theta,
            -sin_alpha * sin_theta,
            sin_alpha,
            -cos_alpha * cos_theta,
            -cos_alpha * sin_theta,
            0.0,
            -sin_theta,
            cos_theta,
        );
        let rotation = n.transpose() * r.transpose() * t;
        out.push((rotation, center));
    }
    out
}

/// Real roots of `c[0] x^4 + c[1] x^3 + c[2] x^2 + c[3] x + c[4]`, from the
/// companion matrix eigenvalues and polished by Newton steps.
pub(crate) fn real_quartic_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || c[0].abs() <= 1e-14 * scale {
        return Vec::new();
    }
    let a = [c[1] / c[0], c[2] / c[0], c[3] / c[0], c[4] / c[0]];
    let companion = Matrix4::new(
        -a[0], -a[1], -a[2], -a[3], //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let eig: Vec<Complex<f64>> = companion.complex_eigenvalues().iter().copied().collect();
    let poly = |x: f64| (((x + a[0]) * x + a[1]) * x + a[2]) * x + a[3];
    let deriv = |x: f64| ((4.0 * x + 3.0 * a[0]) * x + 2.0 * a[1]) * x + a[2];
    let mut roots: Vec<f64> = eig
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let d = deriv(x);
                if d == 0.0 {
                    break;
                }
                let step = poly(x) / d;
                let next = x - step;
                if poly(next).abs() > poly(x).abs() {
                    break;
                }
                x = next;
                if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect();
    roots.sort_by(|a, b| a.total_cmp(b));
    roots
}

/// Gauss-Newton on the six normalized-image residuals of the three points.
/// Returns `None` when the candidate places a point behind the camera.
fn polish(
    world: &[Vec3; 3],
    bearings: &[Vec3; 3],
    rotation_cw: Matrix3<f64>,
    center: Vec3,
) -> Option<RigidPose> {
    let rot = Rotation3::from_matrix(&rotation_cw.transpose());
    let mut q = UnitQuaternion::from_rotation_matrix(&rot);
    let mut t = -(q * center);
    let observed: Vec<(f64, f64)> = bearings.iter().map(|f| (f.x / f.z, f.y / f.z)).collect();

    let residual = |q: &UnitQuaternion<f64>, t: &Vec3| -> Option<Vector6<f64>> {
        let mut r = Vector6::zeros();
        for (i, x) in world.iter().enumerate() {
            let pc = q * x + t;
            if pc.z <= 0.0 {
                return None;
            }
            r[2 * i] = pc.x / pc.z - observed[i].0;
            r[2 * i + 1] = pc.y / pc.z - observed[i].1;
        }
        Some(r)
    };

    let mut r = residual(&q, &t)?;
    for _ in 0..6 {
        if r.norm() < 1e-15 {
            break;
        }
        let mut jac = Matrix6::zeros();
        for (i, x) in world.iter().enumerate() {
            let pc = q * x + t;
            let iz = 1.0 / pc.z;
            let du = Vec3::new(iz, 0.0, -pc.x * iz * iz);
            let dv = Vec3::new(0.0, iz, -pc.y * iz * iz);
            // d pc / d omega = -[pc]x for a left-multiplied rotation increment
            let skew = pc.cross_matrix();
            let du_w = -(du.transpose() * skew);
            let dv_w = -(dv.transpose() * skew);
            for j in 0..3 {
                jac[(2 * i, j)] = du_w[j];
                jac[(2 * i + 1, j)] = dv_w[j];
                jac[(2 * i, 3 + j)] = du[j];
                jac[(2 * i + 1, 3 + j)] = dv[j];
            }
        }
        let Some(step) = jac.lu().solve(&(-r)) else {
            break;
        };
        let omega = Vec3::new(step[0], step[1], step[2]);
        let dq = UnitQuaternion::from_scaled_axis(omega);
        let q_new = dq * q;
        let t_new = dq * t + Vec3::new(step[3], step[4], step[5]);
        match residual(&q_new, &t_new) {
            Some(r_new) if r_new.norm() < r.norm() => {
                q = q_new;
                t = t_new;
                r = r_new;
            }
            _ => break,
        }
    }
    Some(RigidPose::new(q, t, PoseDirection::WorldToCamera))
}
