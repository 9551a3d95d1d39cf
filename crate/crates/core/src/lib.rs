//! Multi-aspect CEFR speaking assessment with a multi-margin ordinal loss.
//!
//! Content, delivery and language-use encoders feed a fused prediction
//! head over eight CEFR levels. Training combines cross-entropy with a
//! hinge over logit-space cosine similarities whose margin grows with the
//! cumulative distance between levels.

pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod harness;
pub mod labels;
pub mod model;
pub mod numerics;
pub mod objective;

pub use config::{MarginMode, RunConfig};
pub use data::{load_dataset, load_manifest, Instance, InstanceDescriptor, Matrix};
pub use error::{Error, Result};
pub use labels::{Aspect, CefrScale, Level, NUM_LEVELS};
