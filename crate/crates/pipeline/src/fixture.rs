//! Writes the synthetic facade as a ready-to-run project directory, along
//! with a ground-truth file for tests and demos.

use std::path::Path;

use asbuilt_core::geometry::{PixelPoint, Similarity, Vec3};
use asbuilt_core::spatial::KeyframeId;
use asbuilt_core::synthetic::{FacadeScene, FacadeSpec, WINDOW_HEIGHT_M, WINDOW_WIDTH_M};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::formats;
use crate::project::{PipelineConfig, ProjectFile, ProjectState, RegistrationClicks, PROJECT_FILE};

pub const TRUTH_FILE: &str = "truth.json";
pub const CLICKS_FILE: &str = "clicks.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTruth {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    /// Model-frame corners, clockwise from top-left seen from outside.
    pub corners: [Vec3; 4],
    pub center: Vec3,
    /// A model-frame ray hitting the window center head-on.
    pub query_origin: Vec3,
    pub query_direction: Vec3,
    /// Keyframe a query at the center should return.
    pub expected_keyframe: KeyframeId,
    /// Rounded corner projections in that keyframe, same order as `corners`.
    pub corner_clicks: [PixelPoint; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub spec: FacadeSpec,
    pub window_width_m: f64,
    pub window_height_m: f64,
    /// Hidden SLAM-to-model similarity.
    pub slam_to_model: Similarity,
    pub windows: Vec<WindowTruth>,
}

pub fn truth_for(scene: &FacadeScene) -> FixtureTruth {
    let windows = scene
        .windows
        .iter()
        .map(|w| {
            let expected = scene.expected_keyframe(w);
            WindowTruth {
                id: w.id,
                row: w.row,
                col: w.col,
                corners: w.corners,
                center: w.center,
                query_origin: w.center + Vec3::new(0.0, 0.0, scene.spec.camera_distance_m),
                query_direction: -Vec3::z(),
                expected_keyframe: expected,
                corner_clicks: scene.clicks(expected, &w.corners),
            }
        })
        .collect();
    FixtureTruth {
        spec: scene.spec,
        window_width_m: WINDOW_WIDTH_M,
        window_height_m: WINDOW_HEIGHT_M,
        slam_to_model: scene.slam_to_model,
        windows,
    }
}

/// Renders and writes the project. Existing files are overwritten.
pub fn write_fixture(root: &Path, spec: FacadeSpec) -> Result<FixtureTruth> {
    let scene = FacadeScene::new(spec);
    std::fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
    formats::write_bytes(&root.join("model.obj"), formats::format_obj(&scene.mesh))?;
    formats::write_intrinsics(&root.join("intrinsics.json"), &scene.intrinsics)?;
    formats::write_keyframes(&root.join("keyframes.json"), &scene.slam_keyframes)?;
    formats::write_bytes(&root.join("points.ply"), formats::format_ply(&scene.slam_points))?;
    scene.slam_keyframes.par_iter().try_for_each(|kf| {
        let img = scene.render(kf.id).expect("scene keyframe");
        formats::write_bytes(&root.join(&kf.image), formats::encode_png(&img))
    })?;

    let clicks = RegistrationClicks {
        model: scene.registration_model_clicks,
        image: scene.registration_image_clicks,
        first_keyframe: Some(scene.slam_keyframes[0].id),
        second_keyframe: Some(scene.slam_keyframes[1].id),
    };
    formats::write_json(&root.join(CLICKS_FILE), &clicks)?;
    let truth = truth_for(&scene);
    formats::write_json(&root.join(TRUTH_FILE), &truth)?;
    let project = ProjectFile {
        mesh: "model.obj".into(),
        intrinsics: "intrinsics.json".into(),
        keyframes: "keyframes.json".into(),
        points: "points.ply".into(),
        config: PipelineConfig { rng_seed: spec.seed, ..Default::default() },
        state: ProjectState::default(),
    };
    formats::write_json(&root.join(PROJECT_FILE), &project)?;
    Ok(truth)
}
