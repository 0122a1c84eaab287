//! Stage implementations shared by the CLI and the HTTP service.

use std::collections::BTreeMap;

use asbuilt_core::geometry::{PixelPoint, Ray, Vec3};
use asbuilt_core::measurement::{self, window_scales, WindowScale};
use asbuilt_core::planes::extract_planes;
use asbuilt_core::registration::{
    align_map, align_pose, build_model_alignment, register_first_keyframe, AlignmentViews, Correspondence3D2D,
};
use asbuilt_core::spatial::{KeyframeId, QueryResult, SpatialDatabase};
use asbuilt_core::stats::{
    error_stats, two_factor_anova_rep, welch_t_test, AnovaResult, ErrorStats, SampleSummary, TTestResult,
};
use asbuilt_core::texturing::{boundaries_from_mesh, build_textured_model};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result, Stage};
use crate::formats::{self, EvalInput};
use crate::project::{PlanesRecord, Project, RegistrationClicks, RegistrationRecord, TextureRecord, STAGE_DIR};

/// Solves the first keyframe's pose from the clicks and the map-to-model
/// similarity from the clicks plus a second keyframe. Clears later stages.
pub fn register(project: &mut Project, clicks: &RegistrationClicks) -> Result<RegistrationRecord> {
    let mut ids: Vec<KeyframeId> = project.keyframes.iter().map(|k| k.id).collect();
    ids.sort_unstable();
    let first_id = clicks.first_keyframe.or(ids.first().copied()).ok_or_else(|| {
        PipelineError::InvalidProject("project has no keyframes".into())
    })?;
    let second_id = match clicks.second_keyframe {
        Some(id) => id,
        None => *ids
            .iter()
            .find(|&&id| id > first_id)
            .ok_or_else(|| PipelineError::InvalidRequest(format!("no keyframe after {first_id}")))?,
    };
    if first_id == second_id {
        return Err(PipelineError::InvalidRequest("first and second keyframe must differ".into()));
    }
    let first = project.keyframe(first_id)?.clone();
    let second = project.keyframe(second_id)?.clone();
    let first_image = formats::read_png(&project.path(&first.image))?.to_gray();
    let second_image = formats::read_png(&project.path(&second.image))?.to_gray();
    let k = project.intrinsics;

    let corr: [Correspondence3D2D; 4] =
        std::array::from_fn(|i| Correspondence3D2D { model_point: clicks.model[i], image_point: clicks.image[i] });
    let pose = register_first_keyframe(&corr, &k)?;
    let views = AlignmentViews { first: &first, first_image: &first_image, second: &second, second_image: &second_image };
    let alignment = build_model_alignment(&clicks.model, &clicks.image, &views, &k, &project.config.patch_match)?;
    let aligned_first = align_pose(&first.pose, &alignment.similarity);
    let (angle, _) = aligned_first.distance_to(&pose);
    let distance = (aligned_first.center() - pose.center()).norm();

    let record = RegistrationRecord {
        clicks: clicks.clone(),
        first_keyframe: first_id,
        second_keyframe: second_id,
        similarity: alignment.similarity,
        first_pose_from_clicks: pose,
        pose_check_angle_deg: angle.to_degrees(),
        pose_check_distance_m: distance,
        matches: alignment.matches,
        ncc_scores: alignment.ncc_scores,
        triangulated: alignment.map_points,
        rms_m: alignment.rms,
    };
    let rel = format!("{STAGE_DIR}/registration.json");
    formats::write_json(&project.path(&rel), &record)?;
    project.invalidate_from(Stage::Register);
    project.file.state.registration = Some(rel);
    project.registration = Some(record.clone());
    project.save()?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignSummary {
    pub keyframes: usize,
    pub points: usize,
    pub scale: f64,
}

/// Moves keyframes and map points into the model frame.
pub fn align(project: &mut Project) -> Result<AlignSummary> {
    project.require(Stage::Align)?;
    let sim = project.registration.as_ref().expect("checked by require").similarity;
    let (points, keyframes) = align_map(&project.points, &project.keyframes, &sim);
    let kf_rel = format!("{STAGE_DIR}/aligned_keyframes.json");
    let pt_rel = format!("{STAGE_DIR}/aligned_points.ply");
    formats::write_keyframes(&project.path(&kf_rel), &keyframes)?;
    let ply = formats::format_ply(&points);
    formats::write_bytes(&project.path(&pt_rel), &ply)?;
    project.invalidate_from(Stage::Align);
    project.file.state.aligned_keyframes = Some(kf_rel);
    project.file.state.aligned_points = Some(pt_rel.clone());
    // keep exactly what a reload would see
    let stored = formats::parse_ply(&ply, &pt_rel)?;
    let summary = AlignSummary { keyframes: keyframes.len(), points: stored.len(), scale: sim.scale };
    project.aligned = Some((keyframes, stored));
    project.save()?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSummary {
    pub normal: Vec3,
    pub offset: f64,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub planes: Vec<PlaneSummary>,
    pub outliers: usize,
}

pub fn fit_planes(project: &mut Project) -> Result<FitSummary> {
    project.require(Stage::FitPlanes)?;
    let (_, points) = project.aligned.as_ref().expect("checked by require");
    let out = extract_planes(points, &project.config.ransac())?;
    let record = PlanesRecord { planes: out.planes, outliers: out.outliers };
    let rel = format!("{STAGE_DIR}/planes.json");
    formats::write_json(&project.path(&rel), &record)?;
    project.invalidate_from(Stage::FitPlanes);
    project.file.state.planes = Some(rel);
    let summary = FitSummary {
        planes: record
            .planes
            .iter()
            .map(|p| PlaneSummary { normal: p.params.normal(), offset: p.params.d, members: p.member_indices.len() })
            .collect(),
        outliers: record.outliers.len(),
    };
    project.planes = Some(record);
    project.save()?;
    Ok(summary)
}

/// A click on the model: the keyframe whose map point lies nearest the
/// picked vertex.
pub fn query(db: &SpatialDatabase, origin: Vec3, direction: Vec3) -> Result<QueryResult> {
    let ray = Ray::new(origin, direction).map_err(|e| PipelineError::InvalidRequest(e.to_string()))?;
    Ok(db.query_image(&ray)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleUsed {
    pub index: usize,
    pub pixels_per_meter: f64,
    pub corners: [PixelPoint; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureResponse {
    pub keyframe_id: KeyframeId,
    pub meters: f64,
    pub scale_used: ScaleUsed,
    pub windows_detected: usize,
}

/// Window scales of a keyframe image.
pub fn keyframe_scales(project: &Project, id: KeyframeId) -> Result<Vec<WindowScale>> {
    let kf = project.keyframe(id)?;
    let img = formats::read_png(&project.path(&kf.image))?.to_gray();
    Ok(window_scales(&img, &project.config.windows, project.config.window_height_m)?)
}

pub fn measure_with_scales(id: KeyframeId, p1: PixelPoint, p2: PixelPoint, scales: &[WindowScale]) -> Result<MeasureResponse> {
    if ![p1.u, p1.v, p2.u, p2.v].iter().all(|c| c.is_finite()) {
        return Err(PipelineError::InvalidRequest("click coordinates must be finite".into()));
    }
    let m = measurement::measure(&p1, &p2, scales)?;
    Ok(MeasureResponse {
        keyframe_id: id,
        meters: m.meters,
        scale_used: ScaleUsed {
            index: m.scale_index,
            pixels_per_meter: m.pixels_per_meter,
            corners: scales[m.scale_index].rect.corners,
        },
        windows_detected: scales.len(),
    })
}

pub fn measure(project: &Project, id: KeyframeId, p1: PixelPoint, p2: PixelPoint) -> Result<MeasureResponse> {
    project.require(Stage::Measure)?;
    let scales = keyframe_scales(project, id)?;
    measure_with_scales(id, p1, p2, &scales)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSummary {
    pub boundary: String,
    pub texture: String,
    pub width: u32,
    pub height: u32,
    pub coverage: f64,
    pub keyframes: Vec<KeyframeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSummary {
    pub obj: String,
    pub patches: Vec<PatchSummary>,
    pub uncovered: Vec<String>,
}

/// Textures every boundary in the region of interest and writes
/// `textures/model.obj`, `model.mtl` and one PNG per boundary.
pub fn texture(project: &mut Project) -> Result<TextureSummary> {
    project.require(Stage::Texture)?;
    let db = project.database()?;
    let mut boundaries = boundaries_from_mesh(&project.mesh)?;
    let roi = &project.config.region_of_interest;
    if !roi.is_empty() {
        if let Some(unknown) = roi.iter().find(|id| !boundaries.iter().any(|b| &b.id == *id)) {
            return Err(PipelineError::UnknownBoundary(unknown.clone()));
        }
        boundaries.retain(|b| roi.contains(&b.id));
    }
    let root = project.root.clone();
    let atlas = build_textured_model(&db, &boundaries, &project.config.texturing, |kf| {
        formats::read_png(&root.join(&kf.image)).map_err(|e| e.to_string())
    })?;

    let dir = "textures";
    let (obj, mtl) = formats::format_textured_obj(&atlas, "model.mtl");
    formats::write_bytes(&project.path(&format!("{dir}/model.obj")), obj)?;
    formats::write_bytes(&project.path(&format!("{dir}/model.mtl")), mtl)?;
    let mut patches = Vec::new();
    for p in &atlas.patches {
        let rel = format!("{dir}/{}", formats::texture_file_name(&p.boundary_id));
        formats::write_bytes(&project.path(&rel), formats::encode_texture_png(&p.texture))?;
        patches.push(PatchSummary {
            boundary: p.boundary_id.clone(),
            texture: rel,
            width: p.texture.frame.width,
            height: p.texture.frame.height,
            coverage: p.texture.coverage(),
            keyframes: p.keyframes.clone(),
        });
    }
    let record = TextureRecord {
        obj: format!("{dir}/model.obj"),
        mtl: format!("{dir}/model.mtl"),
        textures: patches.iter().map(|p| (p.boundary.clone(), p.texture.clone())).collect(),
        uncovered: atlas.uncovered.clone(),
    };
    let rel = format!("{STAGE_DIR}/textures.json");
    formats::write_json(&project.path(&rel), &record)?;
    project.file.state.textures = Some(rel);
    project.textures = Some(record.clone());
    project.save()?;
    Ok(TextureSummary { obj: record.obj, patches, uncovered: record.uncovered })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub method: String,
    pub dimension: String,
    pub summary: SampleSummary,
    /// Errors against ground truth in centimeters; raw input only.
    pub error_cm: Option<ErrorStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestReport {
    pub dimension: String,
    pub method_a: String,
    pub method_b: String,
    pub result: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    /// Row factor levels.
    pub methods: Vec<String>,
    /// Column factor levels.
    pub dimensions: Vec<String>,
    pub result: AnovaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub samples: Vec<SampleReport>,
    pub t_tests: Vec<TTestReport>,
    pub anova: Option<AnovaReport>,
}

/// Error statistics per (method, dimension), Welch tests between methods
/// within each dimension, and a two-factor ANOVA when the raw design is
/// balanced. Groups keep first-appearance order.
pub fn eval(input: &EvalInput, alpha: f64) -> Result<EvalReport> {
    let mut methods: Vec<String> = Vec::new();
    let mut dims: Vec<String> = Vec::new();
    let mut note = |m: &str, d: &str| {
        if !methods.iter().any(|x| x == m) {
            methods.push(m.to_string());
        }
        if !dims.iter().any(|x| x == d) {
            dims.push(d.to_string());
        }
    };
    let mut samples = Vec::new();
    let mut raw_cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    match input {
        EvalInput::Raw(records) => {
            for r in records {
                note(&r.method, &r.dimension);
            }
            for (mi, m) in methods.iter().enumerate() {
                for (di, d) in dims.iter().enumerate() {
                    let rows: Vec<_> = records.iter().filter(|r| &r.method == m && &r.dimension == d).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let values: Vec<f64> = rows.iter().map(|r| r.measured_m).collect();
                    let errors_cm: Vec<f64> = rows.iter().map(|r| (r.measured_m - r.actual_m) * 100.0).collect();
                    samples.push(SampleReport {
                        method: m.clone(),
                        dimension: d.clone(),
                        summary: SampleSummary::from_values(&values)?,
                        error_cm: Some(error_stats(&errors_cm, 0.0)?),
                    });
                    raw_cells.insert((mi, di), values);
                }
            }
        }
        EvalInput::Summary(records) => {
            for r in records {
                note(&r.method, &r.dimension);
                samples.push(SampleReport {
                    method: r.method.clone(),
                    dimension: r.dimension.clone(),
                    summary: SampleSummary { mean: r.mean_m, sd: r.sd_m, n: r.n },
                    error_cm: None,
                });
            }
        }
    }

    let mut t_tests = Vec::new();
    for d in &dims {
        let in_dim: Vec<&SampleReport> = samples.iter().filter(|s| &s.dimension == d).collect();
        for (i, a) in in_dim.iter().enumerate() {
            for b in &in_dim[i + 1..] {
                t_tests.push(TTestReport {
                    dimension: d.clone(),
                    method_a: a.method.clone(),
                    method_b: b.method.clone(),
                    result: welch_t_test(&a.summary, &b.summary, alpha)?,
                });
            }
        }
    }

    let full = raw_cells.len() == methods.len() * dims.len();
    let anova = if full && methods.len() >= 2 && dims.len() >= 2 {
        let cells: Vec<Vec<Vec<f64>>> =
            (0..methods.len()).map(|m| (0..dims.len()).map(|d| raw_cells[&(m, d)].clone()).collect()).collect();
        Some(AnovaReport { methods: methods.clone(), dimensions: dims.clone(), result: two_factor_anova_rep(&cells, alpha)? })
    } else {
        None
    };
    Ok(EvalReport { alpha, samples, t_tests, anova })
}
