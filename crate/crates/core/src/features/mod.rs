//! Per-instance feature matrices: delivery statistics from audio and word
//! alignments, language-use encodings from annotations, ingestion of
//! precomputed embeddings, and a synthetic corpus generator.

mod delivery;
mod language;
mod pitch;
mod synth;

use std::path::Path;

pub use delivery::{
    delivery_features, delivery_vectors, validate_alignments, DeliveryVector, SummaryStats,
    WordAlignment, DELIVERY_COLUMNS, DELIVERY_DIM,
};
pub use language::{
    language_features, FeatureVocab, LinguisticToken, DEPREL_SLOTS, LANGUAGE_DIM, MORPH_SLOTS,
    UPOS_SLOTS,
};
pub use pitch::{extract_pitch, frame_geometry, Audio, PitchFrame, CLARITY_THRESHOLD};
pub use synth::{
    generate_synthetic_corpus, synthesize, write_corpus, ClassGeometry, Layout, SynthSpec,
};

use crate::config::RunConfig;
use crate::data::Matrix;
use crate::error::{Error, Result};

/// Loads a prompt embedding (`1 x prompt_dim`) and frame embeddings
/// (`t x speech_dim`), checking widths against the run configuration.
pub fn ingest_embeddings(
    prompt_path: &Path,
    frames_path: &Path,
    cfg: &RunConfig,
) -> Result<(Vec<f32>, Matrix)> {
    let prompt = Matrix::load(prompt_path)?;
    if prompt.rows() != 1 {
        return Err(Error::DimMismatch {
            what: format!("prompt embedding rows in {}", prompt_path.display()),
            expected: 1,
            found: prompt.rows(),
        });
    }
    if prompt.cols() != cfg.prompt_dim {
        return Err(Error::DimMismatch {
            what: "prompt embedding width".into(),
            expected: cfg.prompt_dim,
            found: prompt.cols(),
        });
    }
    let frames = Matrix::load(frames_path)?;
    if frames.cols() != cfg.speech_dim {
        return Err(Error::DimMismatch {
            what: "speech frame width".into(),
            expected: cfg.speech_dim,
            found: frames.cols(),
        });
    }
    Ok((prompt.data().to_vec(), frames))
}

pub fn read_alignments(path: &Path) -> Result<Vec<WordAlignment>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn read_annotations(path: &Path) -> Result<Vec<LinguisticToken>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
