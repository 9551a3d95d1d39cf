//! The multi-aspect grader: content, delivery and language-use encoders,
//! a linear fusion projection and a linear prediction head over the CEFR
//! levels.
//!
//! Each encoder projects its input rows to the hidden width and applies
//! one pre-normalized block (RMS norm, single-head attention with rotary
//! phases, RMS norm, SiLU-gated feed-forward) followed by attention
//! pooling. The content encoder sees the prompt embedding concatenated
//! onto every speech frame.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{Instance, Matrix};
use crate::error::{Error, Result};
use crate::features::{DELIVERY_DIM, LANGUAGE_DIM};
use crate::labels::NUM_LEVELS;
use crate::numerics::{
    attention_pool, single_head_attention, Graph, HeadProjections, ParamSet, Real, Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub prompt: usize,
    pub speech: usize,
    pub hidden: usize,
    pub ffn: usize,
}

impl ModelDims {
    pub fn from_config(cfg: &RunConfig) -> Self {
        ModelDims {
            prompt: cfg.prompt_dim,
            speech: cfg.speech_dim,
            hidden: cfg.hidden_dim,
            ffn: cfg.ffn_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Content,
    Delivery,
    Language,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [
        EncoderKind::Content,
        EncoderKind::Delivery,
        EncoderKind::Language,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Content => "content",
            EncoderKind::Delivery => "delivery",
            EncoderKind::Language => "language",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EncoderParams {
    input_w: usize,
    input_b: usize,
    null_row: usize,
    attn_norm: usize,
    query: usize,
    key: usize,
    value: usize,
    ffn_norm: usize,
    gate: usize,
    up: usize,
    down: usize,
    pool_query: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AspectModel<T> {
    pub params: ParamSet<T>,
    pub dims: ModelDims,
    pub rotary: bool,
    encoders: [EncoderParams; 3],
    proj_w: usize,
    proj_b: usize,
    head_w: usize,
    head_b: usize,
}

fn block_names(prefix: &str) -> [String; 12] {
    [
        "input_w",
        "input_b",
        "null_row",
        "attn_norm",
        "wq",
        "wk",
        "wv",
        "ffn_norm",
        "w_gate",
        "w_up",
        "w_down",
        "pool_query",
    ]
    .map(|n| format!("{prefix}.{n}"))
}

impl<T: Real> AspectModel<T> {
    /// Randomly initialized model; weights are uniform in
    /// `+-1/sqrt(fan_in)`, biases zero, norm gains one.
    pub fn new(dims: ModelDims, rotary: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let h = dims.hidden;
        let input_widths = [dims.prompt + dims.speech, DELIVERY_DIM, LANGUAGE_DIM];
        let encoders = EncoderKind::ALL.map(|kind| {
            let width = input_widths[kind as usize];
            let n = block_names(kind.name());
            EncoderParams {
                input_w: ps.push_uniform(&n[0], width, h, &mut rng),
                input_b: ps.push_filled(&n[1], 1, h, 0.0),
                null_row: ps.push_uniform(&n[2], 1, width, &mut rng),
                attn_norm: ps.push_filled(&n[3], 1, h, 1.0),
                query: ps.push_uniform(&n[4], h, h, &mut rng),
                key: ps.push_uniform(&n[5], h, h, &mut rng),
                value: ps.push_uniform(&n[6], h, h, &mut rng),
                ffn_norm: ps.push_filled(&n[7], 1, h, 1.0),
                gate: ps.push_uniform(&n[8], h, dims.ffn, &mut rng),
                up: ps.push_uniform(&n[9], h, dims.ffn, &mut rng),
                down: ps.push_uniform(&n[10], dims.ffn, h, &mut rng),
                pool_query: ps.push_uniform(&n[11], h, 1, &mut rng),
            }
        });
        let proj_w = ps.push_uniform("fusion.proj_w", 3 * h, h, &mut rng);
        let proj_b = ps.push_filled("fusion.proj_b", 1, h, 0.0);
        let head_w = ps.push_uniform("head.w", h, NUM_LEVELS, &mut rng);
        let head_b = ps.push_filled("head.b", 1, NUM_LEVELS, 0.0);
        AspectModel {
            params: ps,
            dims,
            rotary,
            encoders,
            proj_w,
            proj_b,
            head_w,
            head_b,
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        AspectModel::new(ModelDims::from_config(cfg), cfg.rotary, cfg.seed)
    }

    /// Rebuilds a model around loaded parameters, checking every shape.
    pub fn from_params(dims: ModelDims, rotary: bool, params: ParamSet<T>) -> Result<Self> {
        let mut model = AspectModel::new(dims, rotary, 0);
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter blocks, expected {}",
                params.len(),
                model.params.len()
            )));
        }
        for (expected, got) in model.params.iter().zip(params.iter()) {
            if expected.name != got.name || expected.tensor.shape() != got.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    got.name,
                    got.tensor.shape(),
                    expected.name,
                    expected.tensor.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn cast<U: Real>(&self) -> AspectModel<U> {
        AspectModel {
            params: self.params.cast(),
            dims: self.dims,
            rotary: self.rotary,
            encoders: self.encoders,
            proj_w: self.proj_w,
            proj_b: self.proj_b,
            head_w: self.head_w,
            head_b: self.head_b,
        }
    }

    /// Indices of the parameters owned by one encoder.
    pub fn encoder_param_indices(&self, kind: EncoderKind) -> Vec<usize> {
        let e = &self.encoders[kind as usize];
        vec![
            e.input_w,
            e.input_b,
            e.null_row,
            e.attn_norm,
            e.query,
            e.key,
            e.value,
            e.ffn_norm,
            e.gate,
            e.up,
            e.down,
            e.pool_query,
        ]
    }

    fn check_instance(&self, inst: &Instance) -> Result<()> {
        let ctx = |e: Error| e.context(format!("instance {}", inst.id));
        if inst.prompt_embedding.is_empty() {
            return Err(ctx(Error::DimMismatch {
                what: "prompt embedding (absent)".into(),
                expected: self.dims.prompt,
                found: 0,
            }));
        }
        let checks = [
            (
                "prompt embedding width",
                self.dims.prompt,
                inst.prompt_embedding.len(),
            ),
            (
                "speech frame width",
                self.dims.speech,
                inst.speech_frames.cols(),
            ),
            ("delivery width", DELIVERY_DIM, inst.delivery_seq.cols()),
            ("language width", LANGUAGE_DIM, inst.language_seq.cols()),
            (
                "language rows",
                inst.delivery_seq.rows(),
                inst.language_seq.rows(),
            ),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(ctx(Error::DimMismatch {
                    what: what.into(),
                    expected,
                    found,
                }));
            }
        }
        Ok(())
    }

    /// Runs one encoder over `rows` (or its null row when there are none)
    /// and returns the pooled `1 x hidden` vector.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        kind: EncoderKind,
        rows: Option<Var>,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let e = self.encoders[kind as usize];
        let p = |g: &mut Graph<T>, i: usize| g.param(&self.params, i);
        let (x, mask): (Var, Vec<bool>) = match rows {
            Some(x) => {
                let m = g.shape(x).0;
                let mask = mask.map(<[bool]>::to_vec).unwrap_or_else(|| vec![true; m]);
                (x, mask)
            }
            None => (p(g, e.null_row), vec![true]),
        };
        let w = p(g, e.input_w);
        let b = p(g, e.input_b);
        let x0 = g.matmul(x, w)?;
        let x0 = g.add_row(x0, b)?;

        let gain = p(g, e.attn_norm);
        let n1 = g.rms_normalize(x0);
        let n1 = g.mul_row(n1, gain)?;
        let proj = HeadProjections {
            query: p(g, e.query),
            key: p(g, e.key),
            value: p(g, e.value),
        };
        let attended = single_head_attention(g, n1, &mask, proj, self.rotary)?;
        let x1 = g.add(x0, attended.output)?;

        let gain = p(g, e.ffn_norm);
        let n2 = g.rms_normalize(x1);
        let n2 = g.mul_row(n2, gain)?;
        let gate_w = p(g, e.gate);
        let up_w = p(g, e.up);
        let down_w = p(g, e.down);
        let gate = g.matmul(n2, gate_w)?;
        let up = g.matmul(n2, up_w)?;
        let hidden = g.silu_gate(up, gate)?;
        let ffn = g.matmul(hidden, down_w)?;
        let x2 = g.add(x1, ffn)?;

        let q = p(g, e.pool_query);
        Ok(attention_pool(g, x2, &mask, q)?.output)
    }

    fn rows_or_null(g: &mut Graph<T>, m: &Matrix) -> Result<Option<Var>> {
        if m.rows() == 0 {
            Ok(None)
        } else {
            Ok(Some(g.constant(Tensor::from_storage(m)?)))
        }
    }

    pub fn encode_content(&self, g: &mut Graph<T>, prompt: &[f32], frames: &Matrix) -> Result<Var> {
        let rows = if frames.rows() == 0 {
            None
        } else {
            let pr = Tensor::row(prompt.iter().map(|&v| T::lit(v as f64)).collect())?;
            let pr = g.constant(pr);
            let pr = g.repeat_row(pr, frames.rows())?;
            let fr = g.constant(Tensor::from_storage(frames)?);
            Some(g.concat_feature(pr, fr)?)
        };
        self.encode(g, EncoderKind::Content, rows, None)
    }

    pub fn encode_delivery(&self, g: &mut Graph<T>, seq: &Matrix) -> Result<Var> {
        if seq.cols() != DELIVERY_DIM {
            return Err(Error::DimMismatch {
                what: "delivery width".into(),
                expected: DELIVERY_DIM,
                found: seq.cols(),
            });
        }
        let rows = Self::rows_or_null(g, seq)?;
        self.encode(g, EncoderKind::Delivery, rows, None)
    }

    pub fn encode_language(&self, g: &mut Graph<T>, seq: &Matrix) -> Result<Var> {
        if seq.cols() != LANGUAGE_DIM {
            return Err(Error::DimMismatch {
                what: "language width".into(),
                expected: LANGUAGE_DIM,
                found: seq.cols(),
            });
        }
        let rows = Self::rows_or_null(g, seq)?;
        self.encode(g, EncoderKind::Language, rows, None)
    }

    /// Logits (`1 x 8`) for one instance, recorded on `g`.
    pub fn forward(&self, g: &mut Graph<T>, inst: &Instance) -> Result<Var> {
        self.check_instance(inst)?;
        let ctx = |e: Error| e.context(format!("instance {}", inst.id));
        let vc = self
            .encode_content(g, &inst.prompt_embedding, &inst.speech_frames)
            .map_err(|e| ctx(e.context("content encoder")))?;
        let vd = self
            .encode_delivery(g, &inst.delivery_seq)
            .map_err(|e| ctx(e.context("delivery encoder")))?;
        let vl = self
            .encode_language(g, &inst.language_seq)
            .map_err(|e| ctx(e.context("language encoder")))?;
        let fused = g.concat_feature(vc, vd)?;
        let fused = g.concat_feature(fused, vl)?;
        let pw = g.param(&self.params, self.proj_w);
        let pb = g.param(&self.params, self.proj_b);
        let hw = g.param(&self.params, self.head_w);
        let hb = g.param(&self.params, self.head_b);
        let z = g.matmul(fused, pw)?;
        let z = g.add_row(z, pb)?;
        let z = g.matmul(z, hw)?;
        g.add_row(z, hb)
    }

    /// Stacked `B x 8` logits for a batch.
    pub fn forward_batch(&self, g: &mut Graph<T>, batch: &[&Instance]) -> Result<Var> {
        let rows = batch
            .iter()
            .map(|inst| self.forward(g, inst))
            .collect::<Result<Vec<_>>>()?;
        g.stack_rows(&rows)
    }

    pub fn predict(&self, inst: &Instance) -> Result<[f64; NUM_LEVELS]> {
        let mut g = Graph::new();
        let z = self.forward(&mut g, inst)?;
        let mut out = [0.0; NUM_LEVELS];
        for (o, v) in out.iter_mut().zip(g.value(z).data()) {
            *o = v.as_f64();
        }
        Ok(out)
    }

    pub fn predict_all(&self, data: &[Instance]) -> Result<Vec<[f64; NUM_LEVELS]>> {
        data.iter().map(|i| self.predict(i)).collect()
    }
}
