//! Browser bindings: explore the ordinal loss on hand-edited logits, view
//! the cumulative distance table for a set of adjacent margins, and track
//! the pitch of a synthesized tone.
//!
//! Every entry point takes and returns JSON strings so the page needs no
//! generated glue beyond `wasm-bindgen`'s.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use mmo_asa::features::{extract_pitch, Audio};
use mmo_asa::labels::{CefrScale, Level, LEVEL_NAMES, NUM_LEVELS};
use mmo_asa::objective::{combined_loss, LogitBatch};

#[derive(Debug, Deserialize)]
pub struct LossRequest {
    /// One row of eight logits per instance.
    pub logits: Vec<[f64; NUM_LEVELS]>,
    /// 1-based levels.
    pub labels: Vec<usize>,
    pub margins: [f64; NUM_LEVELS - 1],
    pub lambda: f64,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct LossResponse {
    pub total: f64,
    pub ce: f64,
    pub mmo: f64,
    pub triples: usize,
    pub active_triples: usize,
    /// Gradient of the total with respect to each logit row.
    pub grad: Vec<[f64; NUM_LEVELS]>,
}

pub fn explore_loss(req: &LossRequest) -> mmo_asa::Result<LossResponse> {
    let labels = req
        .labels
        .iter()
        .map(|&c| Level::new(c))
        .collect::<mmo_asa::Result<Vec<_>>>()?;
    let batch = LogitBatch::new(req.logits.clone(), labels)?;
    let scale = CefrScale::default().with_margins(req.margins)?;
    let loss = combined_loss(&batch, &scale, req.lambda)?;
    Ok(LossResponse {
        total: loss.total,
        ce: loss.ce,
        mmo: loss.mmo,
        triples: loss.stats.triples,
        active_triples: loss.active.iter().filter(|a| **a).count(),
        grad: loss.grad,
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct DistanceTable {
    pub levels: Vec<&'static str>,
    pub distances: [[f64; NUM_LEVELS]; NUM_LEVELS],
}

pub fn distances(margins: [f64; NUM_LEVELS - 1]) -> mmo_asa::Result<DistanceTable> {
    let scale = CefrScale::default().with_margins(margins)?;
    Ok(DistanceTable {
        levels: LEVEL_NAMES.to_vec(),
        distances: scale.distance_table(),
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct PitchPoint {
    pub t: f64,
    pub hz: f64,
    pub voiced: bool,
}

/// Pitch track of `seconds` of a sine at `freq_hz` plus an optional second
/// harmonic at `harmonic` relative amplitude.
pub fn tone_pitch(
    freq_hz: f64,
    harmonic: f64,
    sample_rate: u32,
    seconds: f64,
) -> mmo_asa::Result<Vec<PitchPoint>> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 * w;
            (0.5 * (t.sin() + harmonic * (2.0 * t).sin())) as f32
        })
        .collect();
    let frames = extract_pitch(&Audio::new(samples, sample_rate)?)?;
    Ok(frames
        .into_iter()
        .map(|f| PitchPoint {
            t: f.time_s,
            hz: f.pitch_hz,
            voiced: f.voiced,
        })
        .collect())
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

#[wasm_bindgen(js_name = exploreLoss)]
pub fn explore_loss_js(request: &str) -> Result<String, JsValue> {
    let req: LossRequest = serde_json::from_str(request).map_err(js_err)?;
    to_json(&explore_loss(&req).map_err(js_err)?)
}

#[wasm_bindgen(js_name = distanceTable)]
pub fn distance_table_js(margins: &str) -> Result<String, JsValue> {
    let m: [f64; NUM_LEVELS - 1] = serde_json::from_str(margins).map_err(js_err)?;
    to_json(&distances(m).map_err(js_err)?)
}

#[wasm_bindgen(js_name = tonePitch)]
pub fn tone_pitch_js(
    freq_hz: f64,
    harmonic: f64,
    sample_rate: u32,
    seconds: f64,
) -> Result<String, JsValue> {
    to_json(&tone_pitch(freq_hz, harmonic, sample_rate, seconds).map_err(js_err)?)
}
