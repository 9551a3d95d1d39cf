//! Differentiable computation substrate: tensors, a reverse-mode tape,
//! attention blocks, AdamW and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod nn;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, relative_error, Evaluation, GradCheckReport, FD_STEP};
pub use graph::{Graph, Var, RMS_EPS};
pub use nn::{
    attention_pool, cosine_similarity, cosine_with_grad, cross_entropy, single_head_attention,
    zero_norm_cosine_count, Attended, Cosine, HeadProjections,
};
pub use optim::{adamw_step, AdamW, ParamSet, Parameter};
pub use tensor::{Real, Tensor};
