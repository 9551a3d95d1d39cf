//! Instances, the JSON Lines manifest and the portable tensor file format.
//!
//! A tensor file is one ASCII header line `TNSR v1 <rows> <cols>` followed
//! by `rows * cols` little-endian `f32` values in row-major order.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Aspect, CefrScale, Level};

pub const TENSOR_MAGIC: &str = "TNSR";
pub const TENSOR_VERSION: &str = "v1";

/// Dense row-major `f32` matrix. Zero rows are allowed; this is the
/// storage type for features and embeddings on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "matrix",
                lhs: vec![rows, cols],
                rhs: vec![data.len()],
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(cols: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimMismatch {
                    what: "matrix row".into(),
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{TENSOR_MAGIC} {TENSOR_VERSION} {} {}",
            self.rows, self.cols
        )?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads one tensor (header plus payload) from a buffered stream,
    /// leaving the stream positioned right after the payload.
    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let (rows, cols) = parse_tensor_header(&header)?;
        let expected = rows * cols;
        let mut bytes = Vec::with_capacity(expected * 4);
        r.take(expected as u64 * 4).read_to_end(&mut bytes)?;
        if bytes.len() != expected * 4 {
            return Err(Error::TruncatedTensor {
                expected,
                found: bytes.len() / 4,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Matrix { rows, cols, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a tensor file; trailing bytes past the declared payload are
    /// rejected as well as short payloads.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut r = BufReader::new(file);
        let m = Matrix::read_from(&mut r)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::TruncatedTensor {
                expected: m.rows * m.cols,
                found: m.rows * m.cols + rest.len() / 4,
            });
        }
        Ok(m)
    }
}

fn parse_tensor_header(line: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.trim_end_matches(['\n', '\r']).split(' ').collect();
    match parts.as_slice() {
        [magic, version, rows, cols] if *magic == TENSOR_MAGIC && *version == TENSOR_VERSION => {
            let rows = rows
                .parse()
                .map_err(|_| Error::CorruptHeader(format!("bad row count {rows:?}")))?;
            let cols: usize = cols
                .parse()
                .map_err(|_| Error::CorruptHeader(format!("bad column count {cols:?}")))?;
            if cols == 0 {
                return Err(Error::CorruptHeader("zero columns".into()));
            }
            Ok((rows, cols))
        }
        _ => Err(Error::CorruptHeader(format!("{:?}", line.trim_end()))),
    }
}

/// One spoken response with all model inputs loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub task_id: String,
    pub prompt_embedding: Vec<f32>,
    pub speech_frames: Matrix,
    pub delivery_seq: Matrix,
    pub language_seq: Matrix,
    pub labels: BTreeMap<Aspect, Level>,
}

impl Instance {
    pub fn num_frames(&self) -> usize {
        self.speech_frames.rows()
    }

    pub fn num_words(&self) -> usize {
        self.delivery_seq.rows()
    }

    /// Responses without any recognized word.
    pub fn is_degenerate(&self) -> bool {
        self.num_words() == 0
    }

    pub fn label(&self, aspect: Aspect) -> Result<Level> {
        self.labels
            .get(&aspect)
            .copied()
            .ok_or_else(|| Error::MissingLabel(aspect.to_string(), self.id.clone()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.delivery_seq.rows() != self.language_seq.rows() {
            return Err(Error::DimMismatch {
                what: format!("word count of language sequence for {}", self.id),
                expected: self.delivery_seq.rows(),
                found: self.language_seq.rows(),
            });
        }
        Ok(())
    }
}

/// One manifest line as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub task_id: String,
    pub prompt_emb: PathBuf,
    pub speech_frames: PathBuf,
    pub delivery: PathBuf,
    pub language: PathBuf,
    pub scores: BTreeMap<Aspect, f64>,
}

/// A manifest record with paths resolved and scores digitized.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceDescriptor {
    pub id: String,
    pub task_id: String,
    pub prompt_emb: PathBuf,
    pub speech_frames: PathBuf,
    pub delivery: PathBuf,
    pub language: PathBuf,
    pub labels: BTreeMap<Aspect, Level>,
}

impl InstanceDescriptor {
    pub fn load(&self) -> Result<Instance> {
        let prompt = Matrix::load(&self.prompt_emb)?;
        if prompt.rows() != 1 {
            return Err(Error::DimMismatch {
                what: format!("prompt embedding rows in {}", self.prompt_emb.display()),
                expected: 1,
                found: prompt.rows(),
            });
        }
        let inst = Instance {
            id: self.id.clone(),
            task_id: self.task_id.clone(),
            prompt_embedding: prompt.data().to_vec(),
            speech_frames: Matrix::load(&self.speech_frames)?,
            delivery_seq: Matrix::load(&self.delivery)?,
            language_seq: Matrix::load(&self.language)?,
            labels: self.labels.clone(),
        };
        inst.validate()?;
        Ok(inst)
    }
}

pub fn load_manifest(path: &Path, scale: &CefrScale) -> Result<Vec<InstanceDescriptor>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let malformed = |line: usize, reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(line).map_err(|e| malformed(lineno, e.to_string()))?;
        let mut labels = BTreeMap::new();
        for (aspect, score) in &rec.scores {
            let level = scale
                .digitize_score(*score)
                .map_err(|e| malformed(lineno, e.to_string()))?;
            labels.insert(*aspect, level);
        }
        let resolve = |p: &Path| -> Result<PathBuf> {
            let full = base.join(p);
            if full.is_file() {
                Ok(full)
            } else {
                Err(Error::MissingFile(full))
            }
        };
        out.push(InstanceDescriptor {
            prompt_emb: resolve(&rec.prompt_emb)?,
            speech_frames: resolve(&rec.speech_frames)?,
            delivery: resolve(&rec.delivery)?,
            language: resolve(&rec.language)?,
            id: rec.id,
            task_id: rec.task_id,
            labels,
        });
    }
    Ok(out)
}

/// Loads a manifest and every tensor it references.
pub fn load_dataset(path: &Path, scale: &CefrScale) -> Result<Vec<Instance>> {
    load_manifest(path, scale)?
        .iter()
        .map(|d| {
            d.load()
                .map_err(|e| e.context(format!("instance {}", d.id)))
        })
        .collect()
}

pub fn write_manifest<W: Write>(mut w: W, records: &[ManifestRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
