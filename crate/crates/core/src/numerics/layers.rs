use super::{Graph, NumericsError, Tensor, Var};

/// Per-head query/key/value projections, each `[D, D]` with head `h`
/// owning columns `h*d_h..(h+1)*d_h`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

/// Two affine layers around a ReLU, `[D, D_ff]` then `[D_ff, D]`.
#[derive(Debug, Clone, Copy)]
pub struct FfnParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Scaled dot-product attention with `n_heads` heads.
///
/// Inputs are `[n, D]` or batched `[B, n, D]` (keys/values may have a
/// different token count than queries). Heads are merged by concatenation
/// with no output projection. Returns the merged output, shaped like
/// `q_in`, and the attention weights `[B, n_heads, n_q, n_k]` (`B`
/// omitted for unbatched input).
pub fn multi_head_attention(
    g: &mut Graph,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    params: &AttentionParams,
    n_heads: usize,
) -> Result<(Var, Var), NumericsError> {
    let qs = g.shape(q_in).to_vec();
    let ks = g.shape(k_in).to_vec();
    if qs.len() != ks.len() || !(2..=3).contains(&qs.len()) || g.shape(v_in) != ks.as_slice() {
        return Err(NumericsError::Shape {
            op: "multi_head_attention",
            lhs: qs,
            rhs: ks,
        });
    }
    let batched = qs.len() == 3;
    let (b, nq, d) = if batched { (qs[0], qs[1], qs[2]) } else { (1, qs[0], qs[1]) };
    let nk = if batched { ks[1] } else { ks[0] };
    if n_heads == 0 || d % n_heads != 0 {
        return Err(NumericsError::Invalid {
            op: "multi_head_attention",
            msg: format!("model width {d} not divisible by {n_heads} heads"),
        });
    }
    let dh = d / n_heads;

    let split = |g: &mut Graph, x: Var, w: Var, n: usize| -> Result<Var, NumericsError> {
        let p = g.matmul(x, w)?;
        let p = g.reshape(p, &[b, n, n_heads, dh])?;
        let p = g.permute(p, &[0, 2, 1, 3])?;
        g.reshape(p, &[b * n_heads, n, dh])
    };
    let q = split(g, q_in, params.w_q, nq)?;
    let k = split(g, k_in, params.w_k, nk)?;
    let v = split(g, v_in, params.w_v, nk)?;

    let scores = g.bmm_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let weights = g.softmax(scores, 1.0)?;
    let heads = g.attend(weights, v)?;
    let heads = g.reshape(heads, &[b, n_heads, nq, dh])?;
    let merged = g.permute(heads, &[0, 2, 1, 3])?;
    let out = g.reshape(merged, &qs)?;
    let attn = if batched {
        g.reshape(weights, &[b, n_heads, nq, nk])?
    } else {
        g.reshape(weights, &[n_heads, nq, nk])?
    };
    Ok((out, attn))
}

/// `x + W2ᵀ relu(W1ᵀ x + b1) + b2`, applied row-wise.
pub fn ffn_relu_residual(g: &mut Graph, x: Var, params: &FfnParams) -> Result<Var, NumericsError> {
    let hidden = g.affine(x, params.w1, Some(params.b1))?;
    let hidden = g.relu(hidden)?;
    let out = g.affine(hidden, params.w2, Some(params.b2))?;
    g.add(x, out)
}

/// Fixed sinusoidal position table `[len, width]`, positions counted from 0.
pub fn sinusoidal_pe(len: usize, width: usize) -> Result<Tensor, NumericsError> {
    if width % 2 != 0 {
        return Err(NumericsError::Invalid {
            op: "sinusoidal_pe",
            msg: format!("width must be even, got {width}"),
        });
    }
    let mut values = Vec::with_capacity(len * width);
    for t in 0..len {
        for k in 0..width / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * k as f64 / width as f64);
            values.push(angle.sin());
            values.push(angle.cos());
        }
    }
    Tensor::new(vec![len, width], values)
}
