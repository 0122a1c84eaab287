//! Closed-form absolute orientation with scale (unit-quaternion method).

use nalgebra::{Matrix3, Matrix4, Quaternion, SymmetricEigen, UnitQuaternion};

use super::{Correspondence3D3D, RegistrationError};
use crate::geometry::{Similarity, Vec3};

/// Relative second-eigenvalue cutoff below which a point set counts as
/// collinear.
const SPREAD_TOLERANCE: f64 = 1e-12;

/// Similarity `T` minimizing `sum |model_i - T(map_i)|^2`.
///
/// Rotation comes from the dominant eigenvector of Horn's 4×4 matrix, scale
/// from the least-squares ratio `sum model'·R map' / sum |map'|^2` over
/// centered points, then `t = model_mean - s R map_mean`.
pub fn horn_similarity(pairs: &[Correspondence3D3D]) -> Result<Similarity, RegistrationError> {
    if pairs.len() < 3 {
        return Err(RegistrationError::Degenerate(format!(
            "need at least 3 point pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let model_mean = pairs.iter().map(|p| p.model_point).sum::<Vec3>() / n;
    let map_mean = pairs.iter().map(|p| p.map_point).sum::<Vec3>() / n;
    let model: Vec<Vec3> = pairs.iter().map(|p| p.model_point - model_mean).collect();
    let map: Vec<Vec3> = pairs.iter().map(|p| p.map_point - map_mean).collect();
    check_spread(&model, "model")?;
    check_spread(&map, "map")?;

    // s[(i, j)] = sum map_i * model_j
    let mut s = Matrix3::zeros();
    for (a, b) in map.iter().zip(&model) {
        s += a * b.transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let horn = Matrix4::new(
        sxx + syy + szz,
        syz - szy,
        szx - sxz,
        sxy - syx,
        syz - szy,
        sxx - syy - szz,
        sxy + syx,
        szx + sxz,
        szx - sxz,
        sxy + syx,
        -sxx + syy - szz,
        syz + szy,
        sxy - syx,
        szx + sxz,
        syz + szy,
        -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(horn);
    let best = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(best);
    let rotation = UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]));

    let num: f64 = model
        .iter()
        .zip(&map)
        .map(|(m, c)| m.dot(&(rotation * c)))
        .sum();
    let den: f64 = map.iter().map(|c| c.norm_squared()).sum();
    let scale = num / den;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(RegistrationError::Degenerate(format!(
            "estimated scale {scale} is not positive"
        )));
    }
    let translation = model_mean - scale * (rotation * map_mean);
    Ok(Similarity::new(rotation, translation, scale)?)
}

/// Root-mean-square residual of `t` over the pairs.
pub fn similarity_rms(t: &Similarity, pairs: &[Correspondence3D3D]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let ss: f64 = pairs
        .iter()
        .map(|p| (p.model_point - t.apply(&p.map_point)).norm_squared())
        .sum();
    (ss / pairs.len() as f64).sqrt()
}

fn check_spread(centered: &[Vec3], which: &str) -> Result<(), RegistrationError> {
    let mut cov = Matrix3::zeros();
    for p in centered {
        cov += p * p.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= SPREAD_TOLERANCE * ev[0] {
        return Err(RegistrationError::Degenerate(format!(
            "{which} points are collinear or coincident"
        )));
    }
    Ok(())
}
