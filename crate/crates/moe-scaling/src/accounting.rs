//! Parameter, FLOP, and memory arithmetic for decoder transformers whose
//! feed-forward blocks may be replicated across E experts, plus the standard
//! width rule (heads = blocks = d_model / 64) and its inversions.
//!
//! Counts are exact in wide integers; the `_real` variants evaluate the same
//! formulas over real-valued widths so planners can optimize smoothly and
//! snap to a concrete shape only when reporting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric;

/// Vocabulary size assumed by the bundled data. Every count operation takes
/// the vocabulary explicitly; pass this constant for the default.
pub const D_VOCAB: u64 = 50257;

/// Width granularity of the standard shape rule.
pub const WIDTH_STEP: u64 = 64;

/// Width range searched by the shape inversions.
pub const WIDTH_BRACKET: (f64, f64) = (64.0, 131_072.0);

#[derive(Debug, Error)]
pub enum AccountingError {
    #[error("no shape reaches {kind} count {target}: minimum representable is {min}")]
    NoRoot {
        kind: &'static str,
        target: f64,
        min: f64,
    },
    #[error("{kind} count {target} needs a width above {}", WIDTH_BRACKET.1)]
    AboveBracket { kind: &'static str, target: f64 },
    #[error("d_model {d_model} is not a positive multiple of {WIDTH_STEP}")]
    NonStandardWidth { d_model: u64 },
    #[error("experts must be at least 1")]
    ZeroExperts,
}

/// Transformer geometry. Standard-rule shapes have
/// n_blocks = n_heads = d_model / 64; other combinations are representable
/// and report [`ModelShape::is_standard`] = false.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub d_model: u64,
    pub n_blocks: u64,
    pub n_heads: u64,
    pub experts: u64,
}

impl ModelShape {
    /// Shape under the standard rule at the given width.
    pub fn standard(d_model: u64, experts: u64) -> Result<Self, AccountingError> {
        if d_model == 0 || d_model % WIDTH_STEP != 0 {
            return Err(AccountingError::NonStandardWidth { d_model });
        }
        if experts == 0 {
            return Err(AccountingError::ZeroExperts);
        }
        let n = d_model / WIDTH_STEP;
        Ok(ModelShape {
            d_model,
            n_blocks: n,
            n_heads: n,
            experts,
        })
    }

    pub fn is_standard(&self) -> bool {
        self.d_model % WIDTH_STEP == 0
            && self.n_blocks == self.d_model / WIDTH_STEP
            && self.n_heads == self.d_model / WIDTH_STEP
    }
}

/// Parameter counts for one shape, embeddings included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub active: u128,
    pub total: u128,
    /// Active parameters excluding the embedding table.
    pub active_nonemb: u128,
}

pub fn param_counts(shape: &ModelShape, d_vocab: u64) -> ParamCounts {
    let active = active_params(shape, d_vocab);
    ParamCounts {
        active,
        total: total_params(shape, d_vocab),
        active_nonemb: active - embedding_params(shape, d_vocab),
    }
}

/// Tied input/output embedding table: 2 * d_model * d_vocab.
pub fn embedding_params(shape: &ModelShape, d_vocab: u64) -> u128 {
    2 * shape.d_model as u128 * d_vocab as u128
}

/// Parameters touched per token: embeddings + 13 * n_blocks * d_model^2.
/// Independent of the expert count (one expert's worth of FFN weights runs).
pub fn active_params(shape: &ModelShape, d_vocab: u64) -> u128 {
    let d = shape.d_model as u128;
    embedding_params(shape, d_vocab) + 13 * shape.n_blocks as u128 * d * d
}

/// All stored parameters: embeddings + (4 + 9E) * n_blocks * d_model^2.
/// Equals [`active_params`] when E = 1; the gap is 9(E-1) * n_blocks * d^2.
pub fn total_params(shape: &ModelShape, d_vocab: u64) -> u128 {
    let d = shape.d_model as u128;
    embedding_params(shape, d_vocab)
        + (4 + 9 * shape.experts as u128) * shape.n_blocks as u128 * d * d
}

/// Training cost in FLOPs: 6 * N_act * D.
pub fn training_flops(n_act: f64, tokens: f64) -> f64 {
    6.0 * n_act * tokens
}

/// Inference cost in FLOPs: 2 * N_act * D_inf.
pub fn inference_flops(n_act: f64, tokens: f64) -> f64 {
    2.0 * n_act * tokens
}

/// Key+value scalars cached for `tokens_cached` positions:
/// 2 * T * n_blocks * d_model.
pub fn kv_cache_elements(tokens_cached: u64, shape: &ModelShape) -> u128 {
    2 * tokens_cached as u128 * shape.n_blocks as u128 * shape.d_model as u128
}

/// Bytes to hold every weight plus a KV cache of `tokens_cached` positions.
/// Optimizer state, gradients, and other activations are out of scope.
pub fn memory_bytes(
    shape: &ModelShape,
    tokens_cached: u64,
    bytes_per_element: u64,
    d_vocab: u64,
) -> u128 {
    bytes_per_element as u128
        * (total_params(shape, d_vocab) + kv_cache_elements(tokens_cached, shape))
}

/// [`active_params`] of the standard-rule shape at real-valued width d.
pub fn active_params_real(d: f64, d_vocab: f64) -> f64 {
    2.0 * d_vocab * d + (13.0 / 64.0) * d * d * d
}

/// [`total_params`] of the standard-rule shape at real-valued width d.
pub fn total_params_real(d: f64, experts: f64, d_vocab: f64) -> f64 {
    2.0 * d_vocab * d + ((4.0 + 9.0 * experts) / 64.0) * d * d * d
}

/// [`kv_cache_elements`] under the standard rule at real-valued width d:
/// 2 T (d/64) d = T d^2 / 32.
pub fn kv_cache_elements_real(d: f64, tokens_cached: f64) -> f64 {
    tokens_cached * d * d / 32.0
}

/// Result of inverting a parameter count back to a width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeInversion {
    /// Real-valued width solving the count equation.
    pub d_real: f64,
    /// d_real snapped to the width multiple whose count lands nearest the
    /// target (ties toward the narrower shape).
    pub shape: ModelShape,
    /// Exact count achieved by the snapped shape.
    pub achieved: u128,
    /// (achieved - target) / target.
    pub residual_rel: f64,
}

/// Width whose standard-rule active count equals n_act.
pub fn shape_from_active(n_act: f64, d_vocab: u64) -> Result<ShapeInversion, AccountingError> {
    invert(n_act, 13, 1, None, d_vocab, true, "active")
}

/// Width whose total count equals n_total at the given expert count.
/// `blocks` pins the depth instead of the standard rule (the equation then
/// turns quadratic in d); the snapped shape keeps that depth and is flagged
/// non-standard unless it happens to match d/64.
pub fn shape_from_total(
    n_total: f64,
    experts: u64,
    blocks: Option<u64>,
    d_vocab: u64,
) -> Result<ShapeInversion, AccountingError> {
    if experts == 0 {
        return Err(AccountingError::ZeroExperts);
    }
    invert(
        n_total,
        4 + 9 * experts,
        experts,
        blocks,
        d_vocab,
        false,
        "total",
    )
}

fn invert(
    target: f64,
    block_coef: u64,
    experts: u64,
    blocks: Option<u64>,
    d_vocab: u64,
    want_active: bool,
    kind: &'static str,
) -> Result<ShapeInversion, AccountingError> {
    let dv = d_vocab as f64;
    let coef = block_coef as f64;
    let count_real = |d: f64| match blocks {
        Some(b) => 2.0 * dv * d + coef * b as f64 * d * d,
        None => 2.0 * dv * d + coef / 64.0 * d * d * d,
    };
    let (lo, hi) = WIDTH_BRACKET;
    let min = count_real(lo);
    if !(target >= min) {
        return Err(AccountingError::NoRoot { kind, target, min });
    }
    if target > count_real(hi) {
        return Err(AccountingError::AboveBracket { kind, target });
    }
    let d_real = numeric::bisect_root(|d| count_real(d) - target, lo, hi, 1e-12)
        .expect("bracket endpoints straddle the target");

    let to_shape = |d: u64| -> ModelShape {
        let nb = blocks.unwrap_or(d / WIDTH_STEP);
        let nh = match blocks {
            Some(b) => b,
            None => d / WIDTH_STEP,
        };
        ModelShape {
            d_model: d,
            n_blocks: nb,
            n_heads: nh,
            experts,
        }
    };
    let count_exact = |s: &ModelShape| {
        if want_active {
            active_params(s, d_vocab)
        } else {
            total_params(s, d_vocab)
        }
    };

    let below = ((d_real / WIDTH_STEP as f64).floor() as u64 * WIDTH_STEP).max(WIDTH_STEP);
    let above = below + WIDTH_STEP;
    let shape_lo = to_shape(below);
    let shape_hi = to_shape(above);
    let err = |s: &ModelShape| (count_exact(s) as f64 - target).abs();
    let shape = if err(&shape_lo) <= err(&shape_hi) {
        shape_lo
    } else {
        shape_hi
    };
    let achieved = count_exact(&shape);
    Ok(ShapeInversion {
        d_real,
        shape,
        achieved,
        residual_rel: (achieved as f64 - target) / target,
    })
}
