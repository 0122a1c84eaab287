use std::fmt;
use std::path::PathBuf;

use asbuilt_core::measurement::MeasurementError;
use asbuilt_core::planes::PlaneError;
use asbuilt_core::registration::RegistrationError;
use asbuilt_core::spatial::{KeyframeId, SpatialError};
use asbuilt_core::stats::StatsError;
use asbuilt_core::texturing::TexturingError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Pipeline stages in flow order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Register,
    Align,
    FitPlanes,
    Query,
    Measure,
    Texture,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Register => "register",
            Stage::Align => "align",
            Stage::FitPlanes => "fit-planes",
            Stage::Query => "query",
            Stage::Measure => "measure",
            Stage::Texture => "texture",
            Stage::Eval => "eval",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },
    #[error("{file}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse { file: String, line: Option<usize>, message: String },
    #[error("i/o error on {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{stage} requires {requires} to have run")]
    StageOrder { stage: Stage, requires: Stage },
    #[error("unknown keyframe {0}")]
    UnknownKeyframe(KeyframeId),
    #[error("unknown boundary {0:?}")]
    UnknownBoundary(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid project: {0}")]
    InvalidProject(String),
    #[error("register: {0}")]
    Registration(#[from] RegistrationError),
    #[error("query: {0}")]
    Spatial(#[from] SpatialError),
    #[error("fit-planes: {0}")]
    Planes(#[from] PlaneError),
    #[error("measure: {0}")]
    Measurement(#[from] MeasurementError),
    #[error("texture: {0}")]
    Texturing(#[from] TexturingError),
    #[error("eval: {0}")]
    Stats(#[from] StatsError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Wire form of an error, shared by the CLI and the HTTP service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub context: Value,
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        let path = path.into();
        if err.kind() == std::io::ErrorKind::NotFound {
            PipelineError::MissingFile { path }
        } else {
            PipelineError::Io { path, message: err.to_string() }
        }
    }

    pub fn parse(file: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        PipelineError::Parse { file: file.into(), line, message: message.into() }
    }

    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::MissingFile { .. } => "missing_file",
            PipelineError::Parse { .. } => "parse_error",
            PipelineError::Io { .. } => "io_error",
            PipelineError::StageOrder { .. } => "stage_order",
            PipelineError::UnknownKeyframe(_) | PipelineError::UnknownBoundary(_) => "not_found",
            PipelineError::InvalidRequest(_) => "invalid_request",
            PipelineError::InvalidProject(_) => "invalid_project",
            PipelineError::Registration(RegistrationError::NoMatch { .. }) => "no_match",
            PipelineError::Registration(_) => "registration_failed",
            PipelineError::Spatial(SpatialError::Miss) => "miss",
            PipelineError::Spatial(SpatialError::EmptyDatabase) => "empty_database",
            PipelineError::Spatial(_) => "invalid_database",
            PipelineError::Planes(_) => "plane_fitting_failed",
            PipelineError::Measurement(MeasurementError::NoScale) => "no_scale",
            PipelineError::Measurement(_) => "measurement_failed",
            PipelineError::Texturing(_) => "texturing_failed",
            PipelineError::Stats(_) => "statistics_failed",
        }
    }

    pub fn context(&self) -> Value {
        match self {
            PipelineError::MissingFile { path } | PipelineError::Io { path, .. } => json!({ "path": path }),
            PipelineError::Parse { file, line, .. } => json!({ "file": file, "line": line }),
            PipelineError::StageOrder { stage, requires } => json!({ "stage": stage, "requires": requires }),
            PipelineError::UnknownKeyframe(id) => json!({ "keyframe_id": id }),
            PipelineError::UnknownBoundary(id) => json!({ "boundary": id }),
            PipelineError::Registration(RegistrationError::NoMatch { indices }) => {
                json!({ "stage": Stage::Register, "indices": indices })
            }
            PipelineError::Registration(_) => json!({ "stage": Stage::Register }),
            PipelineError::Spatial(_) => json!({ "stage": Stage::Query }),
            PipelineError::Planes(_) => json!({ "stage": Stage::FitPlanes }),
            PipelineError::Measurement(_) => json!({ "stage": Stage::Measure }),
            PipelineError::Texturing(TexturingError::ImageLoad { keyframe, .. }) => {
                json!({ "stage": Stage::Texture, "keyframe_id": keyframe })
            }
            PipelineError::Texturing(_) => json!({ "stage": Stage::Texture }),
            PipelineError::Stats(_) => json!({ "stage": Stage::Eval }),
            PipelineError::InvalidRequest(_) | PipelineError::InvalidProject(_) => json!({}),
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { code: self.code().to_string(), message: self.to_string(), context: self.context() }
    }
}
