//! Window-based metric measurement in a single keyframe image.
//!
//! The image is binarized, borders are traced, and borders that simplify to
//! large convex quadrilaterals are taken as windows. A window of known
//! height turns pixel distances into meters for clicks near it. This assumes
//! the measured segment is roughly coplanar with that window; no perspective
//! correction is applied.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelPoint;
use crate::raster::{BinaryImage, GrayImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error("image is empty")]
    EmptyImage,
    #[error("window rectangle has zero height")]
    ZeroHeight,
    #[error("window height must be positive, got {0}")]
    InvalidHeight(f64),
    #[error("no window scale available")]
    NoScale,
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
}

/// Between-class-variance (Otsu) threshold. Pixels `>=` the returned value
/// are foreground; 256 means the histogram cannot be split and everything
/// is background.
pub fn otsu_threshold(img: &GrayImage) -> u16 {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let total = img.data().len() as f64;
    let sum: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();

    let mut below = 0.0;
    let mut below_sum = 0.0;
    let mut best = 0.0;
    let mut first = None;
    let mut last = 0u16;
    for t in 1..256usize {
        below += hist[t - 1] as f64;
        below_sum += (t - 1) as f64 * hist[t - 1] as f64;
        let above = total - below;
        if below == 0.0 || above == 0.0 {
            continue;
        }
        let diff = sum * below - total * below_sum;
        let var = diff * diff / (below * above);
        if var > best * (1.0 + 1e-12) {
            best = var;
            first = Some(t as u16);
            last = t as u16;
        } else if first.is_some() && var >= best * (1.0 - 1e-12) {
            last = t as u16;
        }
    }
    // a flat maximum spans every threshold between two modes; take its middle
    match first {
        Some(f) if best > 0.0 => (f + last) / 2,
        _ => 256,
    }
}

pub fn binarize_with_threshold(img: &GrayImage, threshold: u16) -> BinaryImage {
    BinaryImage::from_fn(img.width(), img.height(), |x, y| u16::from(img.get(x, y)) >= threshold)
}

pub fn binarize(img: &GrayImage) -> Result<BinaryImage, MeasurementError> {
    if img.is_empty() {
        return Err(MeasurementError::EmptyImage);
    }
    Ok(binarize_with_threshold(img, otsu_threshold(img)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourKind {
    Outer,
    Hole,
}

/// Closed border of foreground pixels, as `(x, y)` in tracing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(i32, i32)>,
    pub kind: ContourKind,
}

// Neighbour offsets (dx, dy), clockwise on screen starting east.
const NEIGHBOURS: [(i32, i32); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn direction_of(from: (i32, i32), to: (i32, i32)) -> usize {
    let d = (to.0 - from.0, to.1 - from.1);
    NEIGHBOURS.iter().position(|&n| n == d).expect("pixels are 8-adjacent")
}

/// Suzuki–Abe border following: every outer border and hole border of the
/// 8-connected foreground, in raster order of their starting pixels.
pub fn trace_contours(bin: &BinaryImage) -> Vec<Contour> {
    let w = bin.width() as i32 + 2;
    let h = bin.height() as i32 + 2;
    // one-pixel background frame so tracing never leaves the grid
    let mut f = vec![0i32; (w * h) as usize];
    for y in 0..bin.height() {
        for x in 0..bin.width() {
            if bin.get(x, y) {
                f[((y as i32 + 1) * w + x as i32 + 1) as usize] = 1;
            }
        }
    }
    let idx = |p: (i32, i32)| (p.1 * w + p.0) as usize;

    let mut contours = Vec::new();
    let mut nbd = 1;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let here = f[idx((x, y))];
            if here == 0 {
                continue;
            }
            let (kind, from) = if here == 1 && f[idx((x - 1, y))] == 0 {
                (ContourKind::Outer, (x - 1, y))
            } else if here >= 1 && f[idx((x + 1, y))] == 0 {
                (ContourKind::Hole, (x + 1, y))
            } else {
                continue;
            };
            nbd += 1;
            let start = (x, y);
            let mut points = Vec::new();

            // clockwise search for the first foreground neighbour
            let d0 = direction_of(start, from);
            let first = (0..8)
                .map(|k| (d0 + k) % 8)
                .map(|d| (start.0 + NEIGHBOURS[d].0, start.1 + NEIGHBOURS[d].1))
                .find(|&p| f[idx(p)] != 0);
            let Some(first) = first else {
                f[idx(start)] = -nbd;
                points.push((x - 1, y - 1));
                contours.push(Contour { points, kind });
                continue;
            };

            let mut prev = first;
            let mut cur = start;
            loop {
                points.push((cur.0 - 1, cur.1 - 1));
                // counter-clockwise search starting after `prev`
                let dp = direction_of(cur, prev);
                let mut east_is_background = false;
                let mut next = cur;
                for k in 1..=8 {
                    let d = (dp + 8 - k) % 8;
                    let p = (cur.0 + NEIGHBOURS[d].0, cur.1 + NEIGHBOURS[d].1);
                    if f[idx(p)] != 0 {
                        next = p;
                        break;
                    }
                    if d == 0 {
                        east_is_background = true;
                    }
                }
                if east_is_background {
                    f[idx(cur)] = -nbd;
                } else if f[idx(cur)] == 1 {
                    f[idx(cur)] = nbd;
                }
                if next == start && cur == first {
                    break;
                }
                prev = cur;
                cur = next;
            }
            contours.push(Contour { points, kind });
        }
    }
    contours
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Deviations below this many pixels count as collinear.
const COLLINEAR_PX: f64 = 1e-9;

fn douglas_peucker(points: &[(f64, f64)], epsilon: f64, keep: &mut [bool]) {
    let epsilon = epsilon.max(COLLINEAR_PX);
    let mut stack = vec![(0usize, points.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (mut far, mut far_d) = (lo, -1.0);
        for i in lo + 1..hi {
            let d = segment_distance(points[i], points[lo], points[hi]);
            if d > far_d {
                far = i;
                far_d = d;
            }
        }
        if far_d > epsilon {
            keep[far] = true;
            stack.push((lo, far));
            stack.push((far, hi));
        }
    }
}

/// Douglas–Peucker simplification of an open polyline. The result is a
/// subsequence of the input that keeps both endpoints.
pub fn simplify_polyline(points: &[(f64, f64)], epsilon: f64) -> Vec<(f64, f64)> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    douglas_peucker(points, epsilon, &mut keep);
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

/// Simplification of a closed contour. The ring is split at its first point
/// and the point farthest from it; the first point is dropped afterwards if
/// it lies within `epsilon` of its neighbours' chord.
pub fn simplify_closed(points: &[(f64, f64)], epsilon: f64) -> Vec<(f64, f64)> {
    let n = points.len();
    if n <= 3 {
        return points.to_vec();
    }
    let d2 = |p: (f64, f64)| (p.0 - points[0].0).powi(2) + (p.1 - points[0].1).powi(2);
    let split = (1..n).fold(1, |best, i| if d2(points[i]) > d2(points[best]) { i } else { best });
    let mut ring: Vec<(f64, f64)> = points.to_vec();
    ring.push(points[0]);
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[split] = true;
    keep[n] = true;
    douglas_peucker(&ring[..=split], epsilon, &mut keep[..=split]);
    douglas_peucker(&ring[split..], epsilon, &mut keep[split..]);
    let mut out: Vec<(f64, f64)> = ring[..n].iter().zip(&keep[..n]).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
    if out.len() > 3 {
        let m = out.len();
        let (prev, next) = (out[m - 1], out[1]);
        // every point between prev and next must stay within epsilon
        let prev_idx = ring[..n].iter().rposition(|p| *p == prev).unwrap_or(n - 1);
        let next_idx = ring[..n].iter().position(|p| *p == next).unwrap_or(1);
        let covered = ring[prev_idx..=n]
            .iter()
            .chain(&ring[1..=next_idx])
            .all(|p| segment_distance(*p, prev, next) <= epsilon.max(COLLINEAR_PX));
        if covered {
            out.remove(0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectCandidate {
    /// Clockwise on screen, starting at the top-left corner.
    pub corners: [PixelPoint; 4],
    pub area: f64,
}

impl RectCandidate {
    pub fn centroid(&self) -> PixelPoint {
        let (u, v) = self.corners.iter().fold((0.0, 0.0), |(u, v), c| (u + c.u, v + c.v));
        PixelPoint::new(u / 4.0, v / 4.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            corners: self.corners.map(|c| PixelPoint::new(c.u * k, c.v * k)),
            area: self.area * k * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowDetectionConfig {
    /// Minimum window area as a fraction of the image area.
    pub min_area_fraction: f64,
    /// Simplification tolerance as a fraction of the contour perimeter.
    pub epsilon_fraction: f64,
    /// Fixed binarization threshold instead of Otsu's.
    pub threshold: Option<u16>,
}

impl Default for WindowDetectionConfig {
    fn default() -> Self {
        Self { min_area_fraction: 0.005, epsilon_fraction: 0.02, threshold: None }
    }
}

impl WindowDetectionConfig {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        if !(self.min_area_fraction > 0.0 && self.min_area_fraction < 1.0) {
            return Err(MeasurementError::InvalidConfig(format!(
                "min_area_fraction {} outside (0, 1)",
                self.min_area_fraction
            )));
        }
        if !(self.epsilon_fraction >= 0.0 && self.epsilon_fraction < 1.0) {
            return Err(MeasurementError::InvalidConfig(format!(
                "epsilon_fraction {} outside [0, 1)",
                self.epsilon_fraction
            )));
        }
        Ok(())
    }
}

fn shoelace(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn is_strictly_convex(poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    let mut sign = 0.0;
    for i in 0..n {
        let (a, b, c) = (poly[i], poly[(i + 1) % n], poly[(i + 2) % n]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        if cross == 0.0 || (sign != 0.0 && cross.signum() != sign) {
            return false;
        }
        sign = cross.signum();
    }
    true
}

fn order_corners(quad: &[(f64, f64)]) -> [PixelPoint; 4] {
    let cx = quad.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = quad.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let mut pts: Vec<(f64, f64)> = quad.to_vec();
    // with y pointing down, increasing atan2 runs clockwise on screen
    pts.sort_by(|a, b| (a.1 - cy).atan2(a.0 - cx).total_cmp(&(b.1 - cy).atan2(b.0 - cx)));
    let start = (0..4)
        .min_by(|&i, &j| (pts[i].0 + pts[i].1).total_cmp(&(pts[j].0 + pts[j].1)))
        .unwrap_or(0);
    std::array::from_fn(|k| {
        let p = pts[(start + k) % 4];
        PixelPoint::new(p.0, p.1)
    })
}

/// Convex quadrilaterals among `contours` that are large enough to be
/// windows. Contours touching the image edge are skipped because the
/// window they belong to is cut off.
pub fn detect_windows(
    contours: &[Contour],
    cfg: &WindowDetectionConfig,
    width: u32,
    height: u32,
) -> Result<Vec<RectCandidate>, MeasurementError> {
    cfg.validate()?;
    let min_area = cfg.min_area_fraction * width as f64 * height as f64;
    let mut out = Vec::new();
    for c in contours {
        if c.points.len() < 4 {
            continue;
        }
        let touches_edge = c
            .points
            .iter()
            .any(|&(x, y)| x == 0 || y == 0 || x + 1 >= width as i32 || y + 1 >= height as i32);
        if touches_edge {
            continue;
        }
        let pts: Vec<(f64, f64)> = c.points.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        let perimeter: f64 = (0..pts.len())
            .map(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
                (a.0 - b.0).hypot(a.1 - b.1)
            })
            .sum();
        let quad = simplify_closed(&pts, cfg.epsilon_fraction * perimeter);
        if quad.len() != 4 || !is_strictly_convex(&quad) {
            continue;
        }
        let area = shoelace(&quad).abs();
        if area >= min_area {
            out.push(RectCandidate { corners: order_corners(&quad), area });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScale {
    pub rect: RectCandidate,
    pub pixels_per_meter: f64,
}

/// Scale from the mean pixel length of the window's two vertical edges.
pub fn scale_from_window(rect: &RectCandidate, actual_height_m: f64) -> Result<WindowScale, MeasurementError> {
    if !(actual_height_m > 0.0 && actual_height_m.is_finite()) {
        return Err(MeasurementError::InvalidHeight(actual_height_m));
    }
    let [tl, tr, br, bl] = rect.corners;
    let pixels = 0.5 * (tl.distance(&bl) + tr.distance(&br));
    if !(pixels > 0.0) {
        return Err(MeasurementError::ZeroHeight);
    }
    Ok(WindowScale { rect: *rect, pixels_per_meter: pixels / actual_height_m })
}

/// Binarize, trace and detect windows in one go, returning their scales.
pub fn window_scales(
    img: &GrayImage,
    cfg: &WindowDetectionConfig,
    window_height_m: f64,
) -> Result<Vec<WindowScale>, MeasurementError> {
    if img.is_empty() {
        return Err(MeasurementError::EmptyImage);
    }
    let threshold = cfg.threshold.unwrap_or_else(|| otsu_threshold(img));
    let contours = trace_contours(&binarize_with_threshold(img, threshold));
    detect_windows(&contours, cfg, img.width(), img.height())?
        .iter()
        .map(|r| scale_from_window(r, window_height_m))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub meters: f64,
    /// Index into the scale list that was used.
    pub scale_index: usize,
    pub pixels_per_meter: f64,
}

/// Distance between two clicks, converted with the scale of the window whose
/// centroid is nearest the segment midpoint (ties go to the lowest index).
pub fn measure(p1: &PixelPoint, p2: &PixelPoint, scales: &[WindowScale]) -> Result<Measurement, MeasurementError> {
    let mid = PixelPoint::new(0.5 * (p1.u + p2.u), 0.5 * (p1.v + p2.v));
    let (scale_index, scale) = scales
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.rect.centroid().distance(&mid).total_cmp(&b.rect.centroid().distance(&mid)).then(i.cmp(j))
        })
        .ok_or(MeasurementError::NoScale)?;
    Ok(Measurement {
        meters: p1.distance(p2) / scale.pixels_per_meter,
        scale_index,
        pixels_per_meter: scale.pixels_per_meter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn otsu_cases() {
        let zeros = GrayImage::filled(8, 8, 0);
        assert_eq!(binarize(&zeros).unwrap().count_foreground(), 0);
        for v in [0u8, 77, 255] {
            let flat = GrayImage::filled(5, 4, v);
            assert_eq!(otsu_threshold(&flat), 256);
            assert_eq!(binarize(&flat).unwrap().count_foreground(), 0);
        }
        let two = GrayImage::from_fn(20, 10, |x, _| if x < 7 { 40 } else { 200 });
        let t = otsu_threshold(&two);
        assert!(t > 40 && t <= 200, "{t}");
        let bin = binarize(&two).unwrap();
        for y in 0..10 {
            for x in 0..20 {
                assert_eq!(bin.get(x, y), x >= 7);
            }
        }
        assert_eq!(binarize(&GrayImage::filled(0, 0, 0)), Err(MeasurementError::EmptyImage));
    }

    fn square(w: u32, h: u32, x0: u32, y0: u32, side: u32) -> BinaryImage {
        BinaryImage::from_fn(w, h, |x, y| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side)
    }

    fn assert_closed(c: &Contour) {
        let n = c.points.len();
        for i in 0..n {
            let (a, b) = (c.points[i], c.points[(i + 1) % n]);
            assert!((a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1, "gap {a:?} -> {b:?}");
        }
    }

    #[test]
    fn filled_square_has_one_outer_border() {
        let contours = trace_contours(&square(20, 20, 5, 4, 10));
        assert_eq!(contours.len(), 1);
        let c = &contours[0];
        assert_eq!(c.kind, ContourKind::Outer);
        assert_eq!(c.points.len(), 36);
        assert_eq!(c.points[0], (5, 4));
        assert_closed(c);
        let set: BTreeSet<_> = c.points.iter().copied().collect();
        assert_eq!(set.len(), 36);
        assert!(set.iter().all(|&(x, y)| x == 5 || x == 14 || y == 4 || y == 13));
    }

    #[test]
    fn square_with_hole() {
        let bin = BinaryImage::from_fn(20, 20, |x, y| {
            let outer = (3..13).contains(&x) && (3..13).contains(&y);
            let hole = (6..10).contains(&x) && (6..10).contains(&y);
            outer && !hole
        });
        let contours = trace_contours(&bin);
        let kinds: Vec<_> = contours.iter().map(|c| c.kind).collect();
        assert_eq!(kinds, vec![ContourKind::Outer, ContourKind::Hole]);
        contours.iter().for_each(assert_closed);
        let hole: BTreeSet<_> = contours[1].points.iter().copied().collect();
        // the hole border is the ring of foreground pixels 4-adjacent to the hole
        let expected: BTreeSet<_> = (5..11)
            .flat_map(|x| (5..11).map(move |y| (x, y)))
            .filter(|&(x, y)| !((6..10).contains(&x) && (6..10).contains(&y)))
            .filter(|&(x, y)| !((x == 5 || x == 10) && (y == 5 || y == 10)))
            .collect();
        assert_eq!(hole, expected);
    }

    #[test]
    fn single_pixel_and_image_edge() {
        let dot = BinaryImage::from_fn(3, 3, |x, y| x == 1 && y == 1);
        assert_eq!(trace_contours(&dot), vec![Contour { points: vec![(1, 1)], kind: ContourKind::Outer }]);
        let full = BinaryImage::from_fn(4, 3, |_, _| true);
        let c = trace_contours(&full);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].points.len(), 10);
    }

    /// Foreground pixels with a background (or off-image) 4-neighbour.
    fn boundary_oracle(bin: &BinaryImage) -> BTreeSet<(i32, i32)> {
        let mut set = BTreeSet::new();
        for y in 0..bin.height() as i64 {
            for x in 0..bin.width() as i64 {
                if bin.get_signed(x, y)
                    && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| !bin.get_signed(x + dx, y + dy))
                {
                    set.insert((x as i32, y as i32));
                }
            }
        }
        set
    }

    #[test]
    fn contour_pixels_match_boundary_oracle_on_random_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
            let density = rng.random_range(0.2..0.8);
            let bin = BinaryImage::from_fn(w, h, |_, _| rng.random_bool(density));
            let contours = trace_contours(&bin);
            contours.iter().for_each(assert_closed);
            let traced: BTreeSet<_> = contours.iter().flat_map(|c| c.points.iter().copied()).collect();
            assert_eq!(traced, boundary_oracle(&bin));
        }
    }

    #[test]
    fn convex_blobs_put_each_border_pixel_in_one_contour() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            // separated discs: thick shapes without holes or one-pixel necks
            let discs: Vec<(f64, f64, f64)> = (0..4)
                .map(|i| (15.0 + 30.0 * i as f64, rng.random_range(12.0..18.0), rng.random_range(3.0..10.0)))
                .collect();
            let bin = BinaryImage::from_fn(130, 30, |x, y| {
                discs.iter().any(|&(cx, cy, r)| (x as f64 - cx).hypot(y as f64 - cy) <= r)
            });
            let contours = trace_contours(&bin);
            assert_eq!(contours.len(), 4);
            let mut owner = BTreeMap::new();
            for (i, c) in contours.iter().enumerate() {
                assert_eq!(c.kind, ContourKind::Outer);
                assert!(c.points.len() >= 4);
                for p in &c.points {
                    assert_eq!(*owner.entry(*p).or_insert(i), i);
                }
            }
            assert_eq!(owner.keys().copied().collect::<BTreeSet<_>>(), boundary_oracle(&bin));
        }
    }

    #[test]
    fn simplify_examples() {
        let line: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, 0.5 * i as f64)).collect();
        assert_eq!(simplify_polyline(&line, 1.0), vec![(0.0, 0.0), (99.0, 49.5)]);
        assert_eq!(simplify_polyline(&line, 0.0), vec![(0.0, 0.0), (99.0, 49.5)]);

        let kink = vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 1.0), (2.0, 2.0)];
        assert_eq!(simplify_polyline(&kink, 0.0), vec![(0.0, 0.0), (2.0, 0.0), (2.0, 2.0)]);

        let contours = trace_contours(&square(30, 30, 4, 6, 15));
        let pts: Vec<(f64, f64)> = contours[0].points.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        let quad = simplify_closed(&pts, 2.0);
        let corners: BTreeSet<(i64, i64)> = quad.iter().map(|p| (p.0 as i64, p.1 as i64)).collect();
        assert_eq!(corners, BTreeSet::from([(4, 6), (18, 6), (18, 20), (4, 20)]));
    }

    #[test]
    fn closed_simplification_drops_a_non_corner_start() {
        // start in the middle of the top edge
        let mut ring = Vec::new();
        for x in 5..=10 {
            ring.push((x as f64, 0.0));
        }
        for y in 1..=10 {
            ring.push((10.0, y as f64));
        }
        for x in (0..10).rev() {
            ring.push((x as f64, 10.0));
        }
        for y in (0..10).rev() {
            ring.push((0.0, y as f64));
        }
        for x in 1..5 {
            ring.push((x as f64, 0.0));
        }
        let quad = simplify_closed(&ring, 0.5);
        assert_eq!(quad.len(), 4, "{quad:?}");
    }

    proptest! {
        #[test]
        fn simplification_error_bound(
            pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..60),
            eps in 0.0f64..20.0,
        ) {
            let out = simplify_polyline(&pts, eps);
            // output is a subsequence keeping both ends
            let mut it = pts.iter();
            for p in &out {
                prop_assert!(it.any(|q| q == p));
            }
            prop_assert_eq!(out.first(), pts.first());
            prop_assert_eq!(out.last(), pts.last());
            for p in &pts {
                let d = out.windows(2).map(|s| segment_distance(*p, s[0], s[1])).fold(f64::INFINITY, f64::min);
                prop_assert!(d <= eps + 1e-9);
            }
        }
    }

    /// Wall at 180 with dark windows; `rects` are (x0, y0, x1, y1) inclusive.
    fn facade_image(w: u32, h: u32, rects: &[(u32, u32, u32, u32)]) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            if rects.iter().any(|&(x0, y0, x1, y1)| x >= x0 && x <= x1 && y >= y0 && y <= y1) {
                35
            } else {
                180
            }
        })
    }

    #[test]
    fn detects_three_windows_at_their_corners() {
        let rects = [(40, 60, 139, 149), (200, 60, 299, 149), (360, 70, 459, 159)];
        let img = facade_image(520, 240, &rects);
        let scales = window_scales(&img, &WindowDetectionConfig::default(), 1.8288).unwrap();
        assert_eq!(scales.len(), 3);
        for (s, &(x0, y0, x1, y1)) in scales.iter().zip(&rects) {
            let want = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
            for (c, (x, y)) in s.rect.corners.iter().zip(want) {
                assert!((c.u - x as f64).abs() <= 2.0 && (c.v - y as f64).abs() <= 2.0, "{c:?} vs {x},{y}");
            }
        }
    }

    #[test]
    fn detection_edge_cases() {
        let blank = GrayImage::filled(100, 80, 128);
        assert!(window_scales(&blank, &WindowDetectionConfig::default(), 1.0).unwrap().is_empty());
        // 6x6 window in a 200x200 image is below 0.5% of the area
        let tiny = facade_image(200, 200, &[(50, 50, 55, 55), (100, 100, 139, 139)]);
        let found = window_scales(&tiny, &WindowDetectionConfig::default(), 1.0).unwrap();
        assert_eq!(found.len(), 1);
        assert!(found[0].rect.centroid().u > 100.0);
        let bad = WindowDetectionConfig { min_area_fraction: 0.0, ..Default::default() };
        assert!(window_scales(&tiny, &bad, 1.0).is_err());
    }

    #[test]
    fn skewed_quadrilateral_is_accepted() {
        // perspective-like trapezoid
        let img = GrayImage::from_fn(300, 300, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let inset = (y - 50.0) * 0.15;
            if (50.0..=250.0).contains(&y) && x >= 60.0 + inset && x <= 240.0 - inset * 0.5 {
                20
            } else {
                200
            }
        });
        let found = window_scales(&img, &WindowDetectionConfig::default(), 1.0).unwrap();
        assert_eq!(found.len(), 1);
        let [tl, tr, br, bl] = found[0].rect.corners;
        assert!(tl.u < tr.u && bl.u < br.u && tl.v < bl.v && tr.v < br.v);
    }

    #[test]
    fn scale_and_measure_examples() {
        let rect = RectCandidate {
            corners: [
                PixelPoint::new(10.0, 10.0),
                PixelPoint::new(210.0, 10.0),
                PixelPoint::new(210.0, 192.88),
                PixelPoint::new(10.0, 192.88),
            ],
            area: 200.0 * 182.88,
        };
        let s = scale_from_window(&rect, 1.8288).unwrap();
        assert!((s.pixels_per_meter - 100.0).abs() < 1e-9);
        let flat = RectCandidate { corners: [PixelPoint::new(0.0, 5.0); 4], area: 0.0 };
        assert_eq!(scale_from_window(&flat, 1.0), Err(MeasurementError::ZeroHeight));
        assert!(scale_from_window(&rect, 0.0).is_err());

        let p = PixelPoint::new(50.0, 50.0);
        assert_eq!(measure(&p, &p, &[s]).unwrap().meters, 0.0);
        let q = PixelPoint::new(50.0, 50.0 + 182.88);
        assert!((measure(&p, &q, &[s]).unwrap().meters - 1.8288).abs() < 1e-12);
        assert_eq!(measure(&p, &q, &[]), Err(MeasurementError::NoScale));
    }

    #[test]
    fn nearest_window_scale_is_used() {
        let at = |x: f64, ppm: f64| WindowScale {
            rect: RectCandidate {
                corners: [
                    PixelPoint::new(x, 0.0),
                    PixelPoint::new(x + 10.0, 0.0),
                    PixelPoint::new(x + 10.0, 10.0),
                    PixelPoint::new(x, 10.0),
                ],
                area: 100.0,
            },
            pixels_per_meter: ppm,
        };
        let scales = [at(0.0, 10.0), at(100.0, 20.0), at(200.0, 40.0)];
        let m = measure(&PixelPoint::new(190.0, 5.0), &PixelPoint::new(230.0, 5.0), &scales).unwrap();
        assert_eq!(m.scale_index, 2);
        assert!((m.meters - 1.0).abs() < 1e-12);
        // midpoint equidistant from windows 0 and 1
        let m = measure(&PixelPoint::new(50.0, 0.0), &PixelPoint::new(60.0, 10.0), &scales).unwrap();
        assert_eq!(m.scale_index, 0);
    }

    #[test]
    fn rendered_window_scale_matches_pinhole_model() {
        // window 2.01168 x 1.8288 m at 6 m with f = 600: 183 px tall
        let (f, z) = (600.0, 6.0);
        let (w_m, h_m) = (2.01168, 1.8288);
        let (cx, cy) = (320.0, 240.0);
        let img = GrayImage::from_fn(640, 480, |x, y| {
            let (u, v) = ((x as f64 - cx) / f * z, (y as f64 - cy) / f * z);
            if u.abs() <= w_m / 2.0 && v.abs() <= h_m / 2.0 {
                30
            } else {
                190
            }
        });
        let scales = window_scales(&img, &WindowDetectionConfig::default(), h_m).unwrap();
        assert_eq!(scales.len(), 1);
        let analytic = f / z;
        assert!((scales[0].pixels_per_meter - analytic).abs() / analytic < 0.01, "{scales:?}");
        let [tl, tr, ..] = scales[0].rect.corners;
        let width = measure(&tl, &tr, &scales).unwrap().meters;
        assert!((width - w_m).abs() / w_m < 0.02, "{width}");
    }

    fn random_scales() -> impl Strategy<Value = Vec<WindowScale>> {
        prop::collection::vec((0.0f64..600.0, 0.0f64..400.0, 5.0f64..100.0, 10.0f64..300.0), 1..6).prop_map(|v| {
            v.into_iter()
                .map(|(x, y, s, ppm)| WindowScale {
                    rect: RectCandidate {
                        corners: [
                            PixelPoint::new(x, y),
                            PixelPoint::new(x + s, y),
                            PixelPoint::new(x + s, y + s),
                            PixelPoint::new(x, y + s),
                        ],
                        area: s * s,
                    },
                    pixels_per_meter: ppm,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn measure_is_symmetric(scales in random_scales(), a in (0.0f64..640.0, 0.0f64..480.0), b in (0.0f64..640.0, 0.0f64..480.0)) {
            let (p, q) = (PixelPoint::new(a.0, a.1), PixelPoint::new(b.0, b.1));
            prop_assert_eq!(measure(&p, &q, &scales).unwrap(), measure(&q, &p, &scales).unwrap());
            prop_assert_eq!(measure(&p, &p, &scales).unwrap().meters, 0.0);
        }

        #[test]
        fn measure_is_zoom_invariant(scales in random_scales(), a in (0.0f64..640.0, 0.0f64..480.0), b in (0.0f64..640.0, 0.0f64..480.0), k in 0.1f64..10.0) {
            let (p, q) = (PixelPoint::new(a.0, a.1), PixelPoint::new(b.0, b.1));
            let zoomed: Vec<WindowScale> = scales
                .iter()
                .map(|s| scale_from_window(&s.rect.scaled(k), s.rect.corners[0].distance(&s.rect.corners[3]) / s.pixels_per_meter).unwrap())
                .collect();
            let base = measure(&p, &q, &scales).unwrap();
            let z = measure(&PixelPoint::new(p.u * k, p.v * k), &PixelPoint::new(q.u * k, q.v * k), &zoomed).unwrap();
            prop_assert!((base.meters - z.meters).abs() <= 1e-9 * base.meters.max(1.0));
        }
    }
}
