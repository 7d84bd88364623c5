//! Analytic floating-point operation counts for one forward pass.
//!
//! Conventions: a multiply-accumulate is 2 operations, every elementwise
//! arithmetic op or transcendental is 1, and each softmax entry costs 6
//! (scale, running max, subtract, exp, sum, divide).

use crate::model::ModelConfig;

const SOFTMAX_PER_ENTRY: u64 = 6;
const LAYER_NORM_PER_ENTRY: u64 = 8;

/// Operation counts per forward stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopCount {
    pub gating: u64,
    pub intra_projection: u64,
    pub intra_pairwise: u64,
    pub intra_ffn: u64,
    pub inter_projection: u64,
    pub inter_pairwise: u64,
    pub inter_ffn: u64,
    pub temporal: u64,
    pub prediction: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.gating
            + self.intra_projection
            + self.intra_pairwise
            + self.intra_ffn
            + self.inter_projection
            + self.inter_pairwise
            + self.inter_ffn
            + self.temporal
            + self.prediction
    }
}

fn affine(rows: u64, inp: u64, out: u64, bias: bool) -> u64 {
    2 * rows * inp * out + if bias { rows * out } else { 0 }
}

/// Score, softmax and weighted-sum cost of `batches × heads` attention
/// blocks of `n_q` queries over `n_k` keys with head width `d_head`.
pub fn pairwise_attention_flops(batches: u64, heads: u64, n_q: u64, n_k: u64, d_head: u64) -> u64 {
    let pairs = batches * heads * n_q * n_k;
    pairs * (2 * d_head + SOFTMAX_PER_ENTRY + 2 * d_head)
}

/// The single-batch, `τM`-token attention the factorized design avoids.
pub fn joint_attention_flops(m: u64, tau: u64, d_model: u64, heads: u64) -> u64 {
    pairwise_attention_flops(1, heads, tau * m, tau * m, d_model / heads)
}

/// The `N₂ M² τ D²` growth term for inter-stock aggregation.
pub fn inter_closed_form(m: u64, tau: u64, d_model: u64, heads: u64) -> f64 {
    (heads * m * m * tau) as f64 * (d_model * d_model) as f64
}

/// Forward-pass counts for `m` stocks under `cfg`.
pub fn forward_flops(cfg: &ModelConfig, m: usize) -> FlopCount {
    let (m, tau, f) = (m as u64, cfg.lookback as u64, cfg.n_features as u64);
    let (d, dff, fm) = (cfg.d_model as u64, cfg.d_ff as u64, cfg.market_dim as u64);
    let (n1, n2) = (cfg.intra_heads as u64, cfg.inter_heads as u64);
    let tokens = m * tau;
    let ffn = affine(tokens, d, dff, true) + tokens * dff + affine(tokens, dff, d, true) + tokens * d;

    let gating = if cfg.disable_gating {
        0
    } else {
        affine(1, fm, f, true) + SOFTMAX_PER_ENTRY * f + f + tokens * f
    };
    let intra_projection =
        affine(tokens, f, d, true) + 2 * tokens * d + LAYER_NORM_PER_ENTRY * tokens * d + 3 * affine(tokens, d, d, false);
    let intra_pairwise = pairwise_attention_flops(m, n1, tau, tau, d / n1);
    let intra_ffn = tokens * d + ffn;
    let (inter_projection, inter_pairwise, inter_ffn) = if cfg.disable_inter_stock {
        (0, 0, 0)
    } else {
        (
            3 * affine(tokens, d, d, false),
            pairwise_attention_flops(tau, n2, m, m, d / n2),
            tokens * d + ffn,
        )
    };
    let temporal = 2 * tokens * d * d + 2 * tokens * d + SOFTMAX_PER_ENTRY * tokens + 2 * tokens * d;
    let prediction = affine(m, d, 1, true);
    FlopCount {
        gating,
        intra_projection,
        intra_pairwise,
        intra_ffn,
        inter_projection,
        inter_pairwise,
        inter_ffn,
        temporal,
        prediction,
    }
}
