//! Project handling, CLI commands and the HTTP service for the as-built
//! inspection pipeline.
//!
//! A project directory holds the CAD mesh, camera intrinsics, the keyframe
//! manifest and the SLAM point cloud, plus the outputs of each completed
//! stage. Stages run in order: register, align, fit-planes, then any of
//! query, measure and texture. `eval` works on measurement CSVs alone.

pub mod commands;
pub mod error;
pub mod fixture;
pub mod formats;
pub mod project;
pub mod service;

pub use error::{ErrorBody, PipelineError, Stage};
pub use project::{Overrides, Project};
