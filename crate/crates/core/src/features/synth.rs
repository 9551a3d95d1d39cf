//! Synthetic ordinal corpora with controllable gaps between adjacent levels.
//!
//! Every modality gets a random base point. With the `line` layout the
//! centroid of level `c` sits at `base + spacing * s_c * direction`, where
//! `s_c` is the sum of the first `c` adjacent gaps, so centroid distance is
//! `spacing` times the cumulative gap. With the `chain` layout each adjacent
//! step runs along its own orthonormal direction: adjacent distances are the
//! same, distances further apart grow as the root of summed squared gaps.
//! Instances add a per-instance Gaussian offset (`noise`) and per-row jitter
//! (`row_noise`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DELIVERY_DIM, LANGUAGE_DIM};
use crate::data::{write_manifest, Instance, ManifestRecord, Matrix};
use crate::error::{Error, Result};
use crate::labels::{Aspect, Level, DEFAULT_SCORES, NUM_LEVELS};

/// How level centroids are laid out inside each modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Collinear, on one random direction.
    Line,
    /// Each adjacent step along its own orthogonal direction.
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub layout: Layout,
    /// Distances between adjacent level centroids, before `spacing`.
    pub gaps: [f64; NUM_LEVELS - 1],
    pub spacing: f64,
    pub noise: f64,
    pub row_noise: f64,
    /// Norm of each modality's base point.
    pub offset: f64,
    pub prompt_dim: usize,
    pub speech_dim: usize,
    pub frames: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub task_id: String,
    /// Seeds the centroids, shared by all splits of one corpus.
    pub geometry_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            layout: Layout::Line,
            gaps: [0.9, 0.5, 0.7, 0.6, 0.8, 0.45, 0.65],
            spacing: 1.0,
            noise: 0.3,
            row_noise: 0.1,
            offset: 1.0,
            prompt_dim: 8,
            speech_dim: 16,
            frames: 6,
            min_words: 3,
            max_words: 6,
            task_id: "A01".into(),
            geometry_seed: 2024,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic spec: {m}")));
        if self.gaps.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("gaps must be finite and >= 0");
        }
        if !(self.spacing > 0.0)
            || !(self.noise >= 0.0)
            || !(self.row_noise >= 0.0)
            || !(self.offset >= 0.0)
        {
            return bad("spacing must be positive; noise, row_noise and offset >= 0");
        }
        if self.prompt_dim == 0 || self.speech_dim == 0 || self.frames == 0 {
            return bad("prompt_dim, speech_dim and frames must be >= 1");
        }
        if self.min_words > self.max_words {
            return bad("min_words > max_words");
        }
        if self.layout == Layout::Chain && self.speech_dim < NUM_LEVELS - 1 {
            return bad("chain layout needs speech_dim >= 7");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let spec: SynthSpec =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Per-modality centroids of all levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGeometry {
    pub prompt: Vec<f32>,
    /// Indexed `[modality][level]` with modalities speech, delivery, language.
    pub centroids: [Vec<Vec<f64>>; 3],
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `k` orthonormal random vectors (Gram-Schmidt); needs `k <= dim`.
fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = unit_vector(rng, dim);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

impl ClassGeometry {
    pub fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.geometry_seed);
        let prompt = unit_vector(&mut rng, spec.prompt_dim)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        let positions: Vec<f64> = std::iter::once(0.0)
            .chain(spec.gaps.iter().scan(0.0, |acc, g| {
                *acc += g;
                Some(*acc)
            }))
            .collect();
        let mut modality = |dim: usize| -> Vec<Vec<f64>> {
            let base: Vec<f64> = unit_vector(&mut rng, dim)
                .iter()
                .map(|v| v * spec.offset)
                .collect();
            match spec.layout {
                Layout::Line => {
                    let dir = unit_vector(&mut rng, dim);
                    positions
                        .iter()
                        .map(|s| {
                            base.iter()
                                .zip(&dir)
                                .map(|(b, d)| b + spec.spacing * s * d)
                                .collect()
                        })
                        .collect()
                }
                Layout::Chain => {
                    let steps = orthonormal(&mut rng, dim, NUM_LEVELS - 1);
                    let mut point = base;
                    let mut out = vec![point.clone()];
                    for (gap, step) in spec.gaps.iter().zip(&steps) {
                        for (p, d) in point.iter_mut().zip(step) {
                            *p += spec.spacing * gap * d;
                        }
                        out.push(point.clone());
                    }
                    out
                }
            }
        };
        let centroids = [
            modality(spec.speech_dim),
            modality(DELIVERY_DIM),
            modality(LANGUAGE_DIM),
        ];
        ClassGeometry { prompt, centroids }
    }
}

/// Generates `counts[c]` instances of each level, in level order.
pub fn synthesize(
    spec: &SynthSpec,
    counts: &[usize; NUM_LEVELS],
    seed: u64,
    split: &str,
) -> Result<Vec<Instance>> {
    spec.validate()?;
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::InvalidConfig(
            "synthetic corpus: every class count is zero".into(),
        ));
    }
    let geometry = ClassGeometry::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise).expect("noise >= 0");
    let jitter = Normal::new(0.0, spec.row_noise).expect("row_noise >= 0");

    let mut out = Vec::new();
    for level in Level::all() {
        for k in 0..counts[level.index()] {
            let words = rng.random_range(spec.min_words..=spec.max_words);
            let mut draw = |modality: usize, rows: usize| -> Matrix {
                let centroid = &geometry.centroids[modality][level.index()];
                let center: Vec<f64> = centroid
                    .iter()
                    .map(|c| c + noise.sample(&mut rng))
                    .collect();
                let data = (0..rows)
                    .flat_map(|_| {
                        center
                            .iter()
                            .map(|c| (c + jitter.sample(&mut rng)) as f32)
                            .collect::<Vec<_>>()
                    })
                    .collect();
                Matrix::new(rows, centroid.len(), data).expect("consistent dims")
            };
            let speech_frames = draw(0, spec.frames);
            let delivery_seq = draw(1, words);
            let language_seq = draw(2, words);
            let labels: BTreeMap<Aspect, Level> = Aspect::ALL.iter().map(|&a| (a, level)).collect();
            out.push(Instance {
                id: format!("{split}-{}-{k:04}", level.class()),
                task_id: spec.task_id.clone(),
                prompt_embedding: geometry.prompt.clone(),
                speech_frames,
                delivery_seq,
                language_seq,
                labels,
            });
        }
    }
    Ok(out)
}

/// Writes `<dir>/<split>.jsonl` plus tensor files under `<dir>/<split>/`.
pub fn write_corpus(dir: &Path, split: &str, instances: &[Instance]) -> Result<PathBuf> {
    let tensor_dir = dir.join(split);
    fs::create_dir_all(&tensor_dir)?;
    let mut records = Vec::with_capacity(instances.len());
    for inst in instances {
        let rel = |kind: &str| PathBuf::from(split).join(format!("{}.{kind}.tnsr", inst.id));
        let prompt = Matrix::new(
            1,
            inst.prompt_embedding.len(),
            inst.prompt_embedding.clone(),
        )?;
        prompt.save(&dir.join(rel("prompt")))?;
        inst.speech_frames.save(&dir.join(rel("frames")))?;
        inst.delivery_seq.save(&dir.join(rel("delivery")))?;
        inst.language_seq.save(&dir.join(rel("language")))?;
        records.push(ManifestRecord {
            id: inst.id.clone(),
            task_id: inst.task_id.clone(),
            prompt_emb: rel("prompt"),
            speech_frames: rel("frames"),
            delivery: rel("delivery"),
            language: rel("language"),
            scores: inst
                .labels
                .iter()
                .map(|(&a, l)| (a, DEFAULT_SCORES[l.index()]))
                .collect(),
        });
    }
    let manifest = dir.join(format!("{split}.jsonl"));
    let mut buf = Vec::new();
    write_manifest(&mut buf, &records)?;
    fs::write(&manifest, buf)?;
    Ok(manifest)
}

pub fn generate_synthetic_corpus(
    spec: &SynthSpec,
    counts: &[usize; NUM_LEVELS],
    seed: u64,
    dir: &Path,
    split: &str,
) -> Result<PathBuf> {
    let instances = synthesize(spec, counts, seed, split)?;
    write_corpus(dir, split, &instances)
}
