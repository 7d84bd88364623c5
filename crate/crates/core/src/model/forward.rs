//! The five-stage forward pass: market-guided gating, intra-stock
//! aggregation, inter-stock aggregation, temporal aggregation and
//! prediction. Every stage is a function over tape variables so the same
//! code serves inference, training and gradient checks.

use super::{ModelConfig, ModelError, ModelParams};
use crate::data::SampleWindow;
use crate::numerics::{
    ffn_relu_residual, multi_head_attention, sinusoidal_pe, AttentionParams, FfnParams, Graph, Tensor, Var,
};

/// Tape handles for every parameter, mirroring [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub gate_w: Var,
    pub gate_b: Var,
    pub enc_w: Var,
    pub enc_b: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
    pub intra: AttentionParams,
    pub intra_ffn: FfnParams,
    pub inter: AttentionParams,
    pub inter_ffn: FfnParams,
    pub temporal_w: Var,
    pub pred_w: Var,
    pub pred_b: Var,
}

impl ParamVars {
    /// Places the parameters on `g`; trainable ones receive gradients.
    pub fn register(g: &mut Graph, params: &ModelParams, trainable: bool) -> Result<Self, ModelError> {
        let vars = params
            .tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t) } else { g.constant(t.clone()) })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_vars(&vars))
    }

    /// From 23 handles in checkpoint order.
    pub fn from_vars(v: &[Var]) -> Self {
        assert_eq!(v.len(), 23, "parameter handle count");
        Self {
            gate_w: v[0],
            gate_b: v[1],
            enc_w: v[2],
            enc_b: v[3],
            ln_gain: v[4],
            ln_bias: v[5],
            intra: AttentionParams {
                w_q: v[6],
                w_k: v[7],
                w_v: v[8],
            },
            intra_ffn: FfnParams {
                w1: v[9],
                b1: v[10],
                w2: v[11],
                b2: v[12],
            },
            inter: AttentionParams {
                w_q: v[13],
                w_k: v[14],
                w_v: v[15],
            },
            inter_ffn: FfnParams {
                w1: v[16],
                b1: v[17],
                w2: v[18],
                b2: v[19],
            },
            temporal_w: v[20],
            pred_w: v[21],
            pred_b: v[22],
        }
    }

    pub fn all(&self) -> [Var; 23] {
        [
            self.gate_w,
            self.gate_b,
            self.enc_w,
            self.enc_b,
            self.ln_gain,
            self.ln_bias,
            self.intra.w_q,
            self.intra.w_k,
            self.intra.w_v,
            self.intra_ffn.w1,
            self.intra_ffn.b1,
            self.intra_ffn.w2,
            self.intra_ffn.b2,
            self.inter.w_q,
            self.inter.w_k,
            self.inter.w_v,
            self.inter_ffn.w1,
            self.inter_ffn.b1,
            self.inter_ffn.w2,
            self.inter_ffn.b2,
            self.temporal_w,
            self.pred_w,
            self.pred_b,
        ]
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[M]`
    pub r_hat: Var,
    /// `[F]`
    pub alpha: Var,
    /// `[M, N₁, τ, τ]`
    pub s1: Var,
    /// `[τ, N₂, M, M]`
    pub s2: Var,
    /// `[M, τ]`
    pub lambda: Var,
    /// `[M, D]`
    pub e: Var,
}

/// Captured forward results, detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub r_hat: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Intra-stock attention `[M, N₁, τ, τ]`.
    pub s1: Tensor,
    /// Inter-stock attention `[τ, N₂, M, M]`.
    pub s2: Tensor,
    /// Temporal weights `[M, τ]`.
    pub lambda: Tensor,
    /// Stock embeddings `[M, D]`.
    pub e: Tensor,
}

/// `α = F · softmax(W_α m + b_α, β)` and `x̃ = α ∘ x`, one `α` per window.
pub fn gate(g: &mut Graph, x: Var, market: Var, p: &ParamVars, cfg: &ModelConfig) -> Result<(Var, Var), ModelError> {
    let f = cfg.n_features;
    if cfg.disable_gating {
        let ones = g.constant(Tensor::filled(vec![f], 1.0))?;
        return Ok((x, ones));
    }
    if g.shape(market) != [cfg.market_dim] {
        return Err(ModelError::Shape(format!(
            "market status has shape {:?}, config expects [{}]",
            g.shape(market),
            cfg.market_dim
        )));
    }
    if g.value(market).iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Input("market status contains non-finite values".into()));
    }
    let m = g.reshape(market, &[1, cfg.market_dim])?;
    let logits = g.affine(m, p.gate_w, Some(p.gate_b))?;
    let logits = g.reshape(logits, &[f])?;
    let dist = g.softmax(logits, cfg.beta)?;
    let alpha = g.scale(dist, f as f64)?;
    let gated = g.mul_broadcast(x, alpha)?;
    Ok((gated, alpha))
}

/// Per stock: `Y = LN(f(x̃) + p)`, then `H¹ = FFN¹(MHA¹(Y) + Y)`.
/// Returns `H¹ [M, τ, D]` and `S¹ [M, N₁, τ, τ]`.
pub fn intra_aggregate(g: &mut Graph, gated: Var, p: &ParamVars, cfg: &ModelConfig) -> Result<(Var, Var), ModelError> {
    let shape = g.shape(gated).to_vec();
    if shape.len() != 3 || shape[1] != cfg.lookback || shape[2] != cfg.n_features {
        return Err(ModelError::Shape(format!(
            "features have shape {shape:?}, config expects [M, {}, {}]",
            cfg.lookback, cfg.n_features
        )));
    }
    let pe = g.constant(sinusoidal_pe(cfg.lookback, cfg.d_model)?)?;
    let y = g.affine(gated, p.enc_w, Some(p.enc_b))?;
    let y = g.add_broadcast(y, pe)?;
    let y = g.layer_norm(y, p.ln_gain, p.ln_bias)?;
    let (attended, s1) = multi_head_attention(g, y, y, y, &p.intra, cfg.intra_heads)?;
    let mixed = g.add(attended, y)?;
    let h = ffn_relu_residual(g, mixed, &p.intra_ffn)?;
    Ok((h, s1))
}

/// Per time step: `Z_t = FFN²(MHA²(H_t) + H_t)` across stocks.
/// Returns `Z [M, τ, D]` and `S² [τ, N₂, M, M]`.
pub fn inter_aggregate(g: &mut Graph, local: Var, p: &ParamVars, cfg: &ModelConfig) -> Result<(Var, Var), ModelError> {
    let shape = g.shape(local).to_vec();
    if shape.len() != 3 || shape[1] != cfg.lookback || shape[2] != cfg.d_model {
        return Err(ModelError::Shape(format!(
            "local embeddings have shape {shape:?}, config expects [M, {}, {}]",
            cfg.lookback, cfg.d_model
        )));
    }
    let (m, tau) = (shape[0], shape[1]);
    if cfg.disable_inter_stock {
        let mut eye = Tensor::zeros(vec![tau, cfg.inter_heads, m, m]);
        let vals = eye.values_mut();
        for blk in 0..tau * cfg.inter_heads {
            for u in 0..m {
                vals[blk * m * m + u * m + u] = 1.0;
            }
        }
        let s2 = g.constant(eye)?;
        return Ok((local, s2));
    }
    let by_step = g.permute(local, &[1, 0, 2])?;
    let (attended, s2) = multi_head_attention(g, by_step, by_step, by_step, &p.inter, cfg.inter_heads)?;
    let mixed = g.add(attended, by_step)?;
    let z = ffn_relu_residual(g, mixed, &p.inter_ffn)?;
    let z = g.permute(z, &[1, 0, 2])?;
    Ok((z, s2))
}

/// `λ_{u,t} ∝ exp(z_{u,t}ᵀ W_λ z_{u,τ})`, `e_u = Σ_t λ_{u,t} z_{u,t}`.
/// Returns `e [M, D]` and `λ [M, τ]`.
pub fn temporal_aggregate(g: &mut Graph, z: Var, w: Var) -> Result<(Var, Var), ModelError> {
    let shape = g.shape(z).to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(ModelError::Shape(format!("temporal embeddings have shape {shape:?}")));
    }
    let (m, tau, d) = (shape[0], shape[1], shape[2]);
    let last = g.select(z, 1, tau - 1)?;
    let last = g.reshape(last, &[m, 1, d])?;
    let projected = g.matmul(z, w)?;
    let scores = g.bmm_nt(projected, last)?;
    let scores = g.reshape(scores, &[m, 1, tau])?;
    let weights = g.softmax(scores, 1.0)?;
    let e = g.attend(weights, z)?;
    let e = g.reshape(e, &[m, d])?;
    let lambda = g.reshape(weights, &[m, tau])?;
    Ok((e, lambda))
}

/// Linear read-out `r̂ = e W_g + b_g`, squeezed to `[M]`.
pub fn predict(g: &mut Graph, e: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let m = g.shape(e)[0];
    let out = g.affine(e, w, Some(b))?;
    Ok(g.reshape(out, &[m])?)
}

/// Full pipeline on tape variables `x [M, τ, F]` and `market [F′]`.
pub fn forward_graph(
    g: &mut Graph,
    x: Var,
    market: Var,
    p: &ParamVars,
    cfg: &ModelConfig,
) -> Result<ForwardVars, ModelError> {
    let (gated, alpha) = gate(g, x, market, p, cfg)?;
    let (local, s1) = intra_aggregate(g, gated, p, cfg)?;
    let (z, s2) = inter_aggregate(g, local, p, cfg)?;
    let (e, lambda) = temporal_aggregate(g, z, p.temporal_w)?;
    let r_hat = predict(g, e, p.pred_w, p.pred_b)?;
    Ok(ForwardVars {
        r_hat,
        alpha,
        s1,
        s2,
        lambda,
        e,
    })
}

/// Places a window's features and market status on the tape.
pub fn window_inputs(g: &mut Graph, window: &SampleWindow, cfg: &ModelConfig) -> Result<(Var, Var), ModelError> {
    let shape = window.x.shape();
    if shape[1] != cfg.lookback || shape[2] != cfg.n_features || window.market.values.len() != cfg.market_dim {
        return Err(ModelError::Shape(format!(
            "window has features {:?} and market width {}, config expects [M, {}, {}] and {}",
            shape,
            window.market.values.len(),
            cfg.lookback,
            cfg.n_features,
            cfg.market_dim
        )));
    }
    let x = g.constant(window.x.clone())?;
    let m = g.constant(Tensor::vector(window.market.values.clone()))?;
    Ok((x, m))
}

impl ForwardVars {
    /// Copies captured values off the tape.
    pub fn capture(&self, g: &Graph) -> ModelOutput {
        let detach = |v: Var| Tensor::new(g.shape(v).to_vec(), g.value(v).to_vec()).expect("shape");
        ModelOutput {
            r_hat: g.value(self.r_hat).to_vec(),
            alpha: g.value(self.alpha).to_vec(),
            s1: detach(self.s1),
            s2: detach(self.s2),
            lambda: detach(self.lambda),
            e: detach(self.e),
        }
    }
}

/// Inference with frozen parameters.
pub fn forward(window: &SampleWindow, params: &ModelParams, cfg: &ModelConfig) -> Result<ModelOutput, ModelError> {
    cfg.validate()?;
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false)?;
    let (x, m) = window_inputs(&mut g, window, cfg)?;
    let out = forward_graph(&mut g, x, m, &p, cfg)?;
    Ok(out.capture(&g))
}
