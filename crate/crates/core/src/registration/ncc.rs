use serde::{Deserialize, Serialize};

use super::RegistrationError;
use crate::geometry::PixelPoint;
use crate::raster::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchMatchConfig {
    pub patch_size: u32,
    pub search_radius: u32,
    pub min_ncc: f64,
}

impl Default for PatchMatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 11,
            search_radius: 48,
            min_ncc: 0.7,
        }
    }
}

impl PatchMatchConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(RegistrationError::InvalidConfig(format!(
                "patch_size must be odd and >= 3, got {}",
                self.patch_size
            )));
        }
        if self.search_radius < self.patch_size {
            return Err(RegistrationError::InvalidConfig(format!(
                "search_radius {} is smaller than patch_size {}",
                self.search_radius, self.patch_size
            )));
        }
        if !(-1.0..=1.0).contains(&self.min_ncc) {
            return Err(RegistrationError::InvalidConfig(format!(
                "min_ncc must lie in [-1, 1], got {}",
                self.min_ncc
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccMatch {
    pub point: PixelPoint,
    pub score: f64,
}

/// Zero-mean patch with its L2 norm; `None` when the patch has no variance.
struct Patch {
    values: Vec<f64>,
    norm: f64,
}

fn extract(img: &GrayImage, cx: i64, cy: i64, half: i64) -> Option<Patch> {
    if cx - half < 0
        || cy - half < 0
        || cx + half >= img.width() as i64
        || cy + half >= img.height() as i64
    {
        return None;
    }
    let side = (2 * half + 1) as usize;
    let mut values = Vec::with_capacity(side * side);
    let mut sum = 0u64;
    for y in (cy - half)..=(cy + half) {
        for x in (cx - half)..=(cx + half) {
            let v = img.get(x as u32, y as u32);
            sum += v as u64;
            values.push(v as f64);
        }
    }
    let mean = sum as f64 / values.len() as f64;
    let mut ss = 0.0;
    for v in values.iter_mut() {
        *v -= mean;
        ss += *v * *v;
    }
    Some(Patch {
        values,
        norm: ss.sqrt(),
    })
}

/// Best zero-mean NCC match of the patch around `ref_px` within the search
/// window of `target`, evaluated on the integer pixel grid.
///
/// Returns `Ok(None)` when no candidate reaches `cfg.min_ncc`. Patches with
/// zero variance never match. Ties keep the first candidate in row-major
/// scan order.
pub fn ncc_match(
    reference: &GrayImage,
    ref_px: &PixelPoint,
    target: &GrayImage,
    cfg: &PatchMatchConfig,
) -> Result<Option<NccMatch>, RegistrationError> {
    cfg.validate()?;
    let half = (cfg.patch_size / 2) as i64;
    let cx = ref_px.u.round() as i64;
    let cy = ref_px.v.round() as i64;
    let Some(ref_patch) = extract(reference, cx, cy, half) else {
        return Err(RegistrationError::PatchOutOfBounds {
            u: ref_px.u,
            v: ref_px.v,
            patch_size: cfg.patch_size,
        });
    };
    if ref_patch.norm == 0.0 {
        return Ok(None);
    }

    let r = cfg.search_radius as i64;
    let mut best: Option<NccMatch> = None;
    for y in (cy - r)..=(cy + r) {
        for x in (cx - r)..=(cx + r) {
            let Some(cand) = extract(target, x, y, half) else {
                continue;
            };
            if cand.norm == 0.0 {
                continue;
            }
            let dot: f64 = ref_patch
                .values
                .iter()
                .zip(&cand.values)
                .map(|(a, b)| a * b)
                .sum();
            let score = dot / (ref_patch.norm * cand.norm);
            if best.is_none_or(|b| score > b.score) {
                best = Some(NccMatch {
                    point: PixelPoint::new(x as f64, y as f64),
                    score,
                });
            }
        }
    }
    Ok(best.filter(|m| m.score >= cfg.min_ncc))
}
