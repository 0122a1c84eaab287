//! Project directory: input file references, configuration and the outputs
//! of completed stages.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use asbuilt_core::geometry::{CameraIntrinsics, PixelPoint, RigidPose, Similarity, TriangleMesh, Vec3};
use asbuilt_core::measurement::WindowDetectionConfig;
use asbuilt_core::planes::{FittedPlane, RansacConfig};
use asbuilt_core::registration::PatchMatchConfig;
use asbuilt_core::spatial::{build_database, Keyframe, KeyframeId, MapPoint, SpatialDatabase};
use asbuilt_core::synthetic::WINDOW_HEIGHT_M;
use asbuilt_core::texturing::TexturingConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{PipelineError, Result, Stage};
use crate::formats;

pub const PROJECT_FILE: &str = "project.json";
pub const STAGE_DIR: &str = "stages";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Seed for every randomized stage; overrides `ransac.rng_seed`.
    pub rng_seed: u64,
    pub patch_match: PatchMatchConfig,
    pub ransac: RansacConfig,
    pub windows: WindowDetectionConfig,
    /// Known height of the windows used as measurement scale.
    pub window_height_m: f64,
    pub texturing: TexturingConfig,
    pub sparse_warning_distance_m: f64,
    /// Boundary ids to texture; empty means every boundary in the mesh.
    pub region_of_interest: Vec<String>,
    /// Significance level for `eval`.
    pub alpha: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            patch_match: PatchMatchConfig::default(),
            ransac: RansacConfig::default(),
            windows: WindowDetectionConfig::default(),
            window_height_m: WINDOW_HEIGHT_M,
            texturing: TexturingConfig::default(),
            sparse_warning_distance_m: 0.5,
            region_of_interest: Vec::new(),
            alpha: 0.01,
        }
    }
}

impl PipelineConfig {
    pub fn ransac(&self) -> RansacConfig {
        RansacConfig { rng_seed: self.rng_seed, ..self.ransac.clone() }
    }
}

/// Four model points and the matching clicks in the first keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationClicks {
    pub model: [Vec3; 4],
    pub image: [PixelPoint; 4],
    /// Defaults to the lowest keyframe id.
    #[serde(default)]
    pub first_keyframe: Option<KeyframeId>,
    /// Defaults to the next keyframe after the first.
    #[serde(default)]
    pub second_keyframe: Option<KeyframeId>,
}

/// Output of `register`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub clicks: RegistrationClicks,
    pub first_keyframe: KeyframeId,
    pub second_keyframe: KeyframeId,
    /// Maps SLAM coordinates into the model frame.
    pub similarity: Similarity,
    /// Model-to-camera pose of the first keyframe solved from the clicks alone.
    pub first_pose_from_clicks: RigidPose,
    /// Angle and center distance between that pose and the first keyframe
    /// after alignment; a cross-check of the two registration paths.
    pub pose_check_angle_deg: f64,
    pub pose_check_distance_m: f64,
    pub matches: Vec<PixelPoint>,
    pub ncc_scores: Vec<f64>,
    pub triangulated: Vec<Vec3>,
    /// RMS model-space residual of the similarity fit, meters.
    pub rms_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanesRecord {
    pub planes: Vec<FittedPlane>,
    pub outliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureRecord {
    pub obj: String,
    pub mtl: String,
    /// Boundary id and texture file, relative to the project root.
    pub textures: Vec<(String, String)>,
    pub uncovered: Vec<String>,
}

/// Paths (relative to the project root) of completed stage outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectState {
    pub registration: Option<String>,
    pub aligned_keyframes: Option<String>,
    pub aligned_points: Option<String>,
    pub planes: Option<String>,
    pub textures: Option<String>,
}

/// The contents of `project.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectFile {
    pub mesh: String,
    pub intrinsics: String,
    pub keyframes: String,
    pub points: String,
    #[serde(default)]
    pub config: PipelineConfig,
    #[serde(default)]
    pub state: ProjectState,
}

/// Command-line adjustments applied on load but never saved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub config_file: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Recursively overlays `patch` onto `base`; objects merge, anything else
/// replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

#[derive(Debug, Clone)]
pub struct Project {
    pub root: PathBuf,
    /// As stored on disk.
    pub file: ProjectFile,
    /// Effective configuration after overrides.
    pub config: PipelineConfig,
    pub mesh: TriangleMesh,
    pub intrinsics: CameraIntrinsics,
    /// SLAM-frame keyframes and points, as ingested.
    pub keyframes: Vec<Keyframe>,
    pub points: Vec<MapPoint>,
    pub registration: Option<RegistrationRecord>,
    /// Model-frame keyframes and points after `align`.
    pub aligned: Option<(Vec<Keyframe>, Vec<MapPoint>)>,
    pub planes: Option<PlanesRecord>,
    pub textures: Option<TextureRecord>,
}

impl Project {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load(root: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let file: ProjectFile = formats::read_json(&root.join(PROJECT_FILE))?;
        let config = effective_config(&file.config, overrides)?;
        let mesh = formats::read_obj(&root.join(&file.mesh))?;
        if mesh.triangles.is_empty() {
            return Err(PipelineError::InvalidProject(format!("mesh {} has no triangles", file.mesh)));
        }
        let intrinsics = formats::read_intrinsics(&root.join(&file.intrinsics))?;
        let keyframes = formats::read_keyframes(&root.join(&file.keyframes), intrinsics)?;
        let points = formats::read_ply(&root.join(&file.points))?;
        check_references(&root, &keyframes, &points)?;

        let registration: Option<RegistrationRecord> =
            file.state.registration.as_ref().map(|p| formats::read_json(&root.join(p))).transpose()?;
        let aligned = match (&file.state.aligned_keyframes, &file.state.aligned_points) {
            (Some(k), Some(p)) => {
                let ak = formats::read_keyframes(&root.join(k), intrinsics)?;
                let ap = formats::read_ply(&root.join(p))?;
                let ids = |v: &[Keyframe]| v.iter().map(|k| k.id).collect::<Vec<_>>();
                if ids(&ak) != ids(&keyframes) || ap.len() != points.len() {
                    return Err(PipelineError::InvalidProject("aligned map does not match the ingested map".into()));
                }
                Some((ak, ap))
            }
            (None, None) => None,
            _ => return Err(PipelineError::InvalidProject("alignment state is incomplete".into())),
        };
        let planes: Option<PlanesRecord> =
            file.state.planes.as_ref().map(|p| formats::read_json(&root.join(p))).transpose()?;
        let textures: Option<TextureRecord> =
            file.state.textures.as_ref().map(|p| formats::read_json(&root.join(p))).transpose()?;

        let project = Self { root, file, config, mesh, intrinsics, keyframes, points, registration, aligned, planes, textures };
        project.check_stage_chain()?;
        Ok(project)
    }

    /// Later stage outputs must not exist without the earlier ones.
    fn check_stage_chain(&self) -> Result<()> {
        let have = [
            (Stage::Register, self.registration.is_some()),
            (Stage::Align, self.aligned.is_some()),
            (Stage::FitPlanes, self.planes.is_some()),
            (Stage::Texture, self.textures.is_some()),
        ];
        for w in have.windows(2) {
            if w[1].1 && !w[0].1 {
                return Err(PipelineError::InvalidProject(format!("{} output present without {}", w[1].0, w[0].0)));
            }
        }
        Ok(())
    }

    pub fn save(&self) -> Result<()> {
        formats::write_json(&self.root.join(PROJECT_FILE), &self.file)
    }

    /// Fails unless every stage that `stage` depends on has completed.
    pub fn require(&self, stage: Stage) -> Result<()> {
        let missing = match stage {
            Stage::Register | Stage::Eval => None,
            Stage::Align => self.registration.is_none().then_some(Stage::Register),
            Stage::FitPlanes => self.aligned.is_none().then_some(Stage::Align),
            Stage::Query | Stage::Measure | Stage::Texture => {
                if self.aligned.is_none() {
                    Some(Stage::Align)
                } else {
                    self.planes.is_none().then_some(Stage::FitPlanes)
                }
            }
        };
        match missing {
            Some(requires) => Err(PipelineError::StageOrder { stage, requires }),
            None => Ok(()),
        }
    }

    pub fn keyframe(&self, id: KeyframeId) -> Result<&Keyframe> {
        self.keyframes.iter().find(|k| k.id == id).ok_or(PipelineError::UnknownKeyframe(id))
    }

    /// Spatial database over the aligned map and fitted planes.
    pub fn database(&self) -> Result<SpatialDatabase> {
        self.require(Stage::Query)?;
        let (keyframes, points) = self.aligned.clone().expect("checked by require");
        let planes = self.planes.as_ref().expect("checked by require").planes.clone();
        Ok(build_database(points, keyframes, self.mesh.clone(), planes)?
            .with_sparse_warning_distance(self.config.sparse_warning_distance_m))
    }

    /// Drops the outputs of `stage` and every later stage.
    pub fn invalidate_from(&mut self, stage: Stage) {
        let s = &mut self.file.state;
        if stage <= Stage::Register {
            s.registration = None;
            self.registration = None;
        }
        if stage <= Stage::Align {
            s.aligned_keyframes = None;
            s.aligned_points = None;
            self.aligned = None;
        }
        if stage <= Stage::FitPlanes {
            s.planes = None;
            self.planes = None;
        }
        s.textures = None;
        self.textures = None;
    }
}

fn effective_config(base: &PipelineConfig, overrides: &Overrides) -> Result<PipelineConfig> {
    let mut config = base.clone();
    if let Some(path) = &overrides.config_file {
        let patch: Value = formats::read_json(path)?;
        let mut value = serde_json::to_value(&config).expect("config serializes");
        merge(&mut value, patch);
        config = serde_json::from_value(value)
            .map_err(|e| PipelineError::parse(path.display().to_string(), None, e.to_string()))?;
    }
    if let Some(seed) = overrides.seed {
        config.rng_seed = seed;
    }
    Ok(config)
}

fn check_references(root: &Path, keyframes: &[Keyframe], points: &[MapPoint]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for kf in keyframes {
        if !ids.insert(kf.id) {
            return Err(PipelineError::InvalidProject(format!("keyframe id {} appears more than once", kf.id)));
        }
        let image = root.join(&kf.image);
        if !image.is_file() {
            return Err(PipelineError::MissingFile { path: image });
        }
    }
    let mut indices = BTreeSet::new();
    for p in points {
        if !ids.contains(&p.source_keyframe) {
            return Err(PipelineError::InvalidProject(format!(
                "map point {} references missing keyframe {}",
                p.index, p.source_keyframe
            )));
        }
        if !indices.insert(p.index) {
            return Err(PipelineError::InvalidProject(format!("map point index {} appears more than once", p.index)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overlays_nested_objects() {
        let mut base = json!({ "a": 1, "b": { "c": 2, "d": 3 } });
        merge(&mut base, json!({ "b": { "d": 4 }, "e": [1] }));
        assert_eq!(base, json!({ "a": 1, "b": { "c": 2, "d": 4 }, "e": [1] }));
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{ "rng_seed": 9, "windows": { "min_area_fraction": 0.01 } }"#).unwrap();
        assert_eq!(c.rng_seed, 9);
        assert_eq!(c.windows.min_area_fraction, 0.01);
        assert_eq!(c.windows.epsilon_fraction, WindowDetectionConfig::default().epsilon_fraction);
        assert_eq!(c.ransac().rng_seed, 9);
        assert_eq!(c.alpha, 0.01);
    }
}
