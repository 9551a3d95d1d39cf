//! Neural building blocks on top of the graph, plus the two closed-form
//! primitives the objectives need (cosine similarity, cross-entropy).

use std::sync::atomic::{AtomicU64, Ordering};

use super::graph::{Graph, Var};
use super::tensor::Real;
use crate::error::{Error, Result};

/// Query, key and value projections of one attention head.
#[derive(Debug, Clone, Copy)]
pub struct HeadProjections {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub output: Var,
    /// Row `i` holds the attention distribution of query `i` over keys.
    pub weights: Var,
}

/// Single-head scaled dot-product self-attention over the rows of `x`.
///
/// Masked rows are excluded as keys and produce zero output rows. When
/// `rotary` is set, queries and keys carry rotary position phases.
pub fn single_head_attention<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    mask: &[bool],
    proj: HeadProjections,
    rotary: bool,
) -> Result<Attended> {
    if mask.len() != g.shape(x).0 {
        return Err(Error::ShapeMismatch {
            op: "attention mask",
            lhs: vec![g.shape(x).0],
            rhs: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked("single_head_attention"));
    }
    let mut q = g.matmul(x, proj.query)?;
    let mut k = g.matmul(x, proj.key)?;
    let v = g.matmul(x, proj.value)?;
    if rotary {
        q = g.rotary(q);
        k = g.rotary(k);
    }
    let width = g.shape(q).1;
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (width as f64).sqrt());
    let weights = g.softmax(scores, Some(mask))?;
    let out = g.matmul(weights, v)?;
    let output = g.mask_rows(out, mask)?;
    Ok(Attended { output, weights })
}

/// Attention pooling with a learned `d x 1` query: a convex combination of
/// the unmasked rows of `h`.
pub fn attention_pool<T: Real>(
    g: &mut Graph<T>,
    h: Var,
    mask: &[bool],
    query: Var,
) -> Result<Attended> {
    if mask.len() != g.shape(h).0 {
        return Err(Error::ShapeMismatch {
            op: "pool mask",
            lhs: vec![g.shape(h).0],
            rhs: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked("attention_pool"));
    }
    let logits = g.matmul(h, query)?;
    let logits = g.transpose(logits);
    let weights = g.softmax(logits, Some(mask))?;
    let output = g.matmul(weights, h)?;
    Ok(Attended { output, weights })
}

static ZERO_NORM_COSINES: AtomicU64 = AtomicU64::new(0);

/// Number of cosine similarities evaluated on a zero vector so far.
pub fn zero_norm_cosine_count() -> u64 {
    ZERO_NORM_COSINES.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Gradient with respect to `u`.
    pub du: Vec<f64>,
    /// Gradient with respect to `v`.
    pub dv: Vec<f64>,
    /// One of the inputs had zero norm; value and gradients are 0.
    pub degenerate: bool,
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    cosine_with_grad(u, v).value
}

/// Cosine similarity clamped to `[-1, 1]` with its gradients.
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> Cosine {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        ZERO_NORM_COSINES.fetch_add(1, Ordering::Relaxed);
        return Cosine {
            value: 0.0,
            du: vec![0.0; u.len()],
            dv: vec![0.0; v.len()],
            degenerate: true,
        };
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let phi = dot / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - phi * a / (nu * nu))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - phi * b / (nv * nv))
        .collect();
    Cosine {
        value: phi.clamp(-1.0, 1.0),
        du,
        dv,
        degenerate: false,
    }
}

/// `-log softmax(z)[target]` and its gradient `softmax(z) - onehot(target)`.
pub fn cross_entropy(z: &[f64], target: usize) -> (f64, Vec<f64>) {
    assert!(
        target < z.len(),
        "target {target} out of {} classes",
        z.len()
    );
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = (sum.ln() + max) - z[target];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[target] -= 1.0;
    (loss, grad)
}
