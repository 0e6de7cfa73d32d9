//! Composite layers built from graph primitives: affine maps, scaled
//! dot-product attention with an additive bias, and a post-norm transformer
//! encoder layer.

use crate::error::NdError;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// `x W + b` with `x: [n, din]`, `w: [din, dout]`, optional `b: [dout]`.
pub fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, NdError> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add_row(y, b),
        None => Ok(y),
    }
}

/// Per-head slopes of the linear attention bias. For a power-of-two head
/// count this is the geometric sequence `base^(h+1)` with
/// `base = 2^(-8 / n_heads)`; otherwise the schedule for the next lower
/// power of two is extended with interleaved slopes from the doubled count.
pub fn alibi_slopes(n_heads: usize) -> Vec<f64> {
    fn pow2_slopes(n: usize) -> Vec<f64> {
        let base = 2f64.powf(-8.0 / n as f64);
        (1..=n).map(|h| base.powi(h as i32)).collect()
    }
    assert!(n_heads > 0, "head count must be positive");
    if n_heads.is_power_of_two() {
        pow2_slopes(n_heads)
    } else {
        let lower = 1usize << (usize::BITS - 1 - n_heads.leading_zeros());
        let mut slopes = pow2_slopes(lower);
        slopes.extend(
            pow2_slopes(2 * lower)
                .into_iter()
                .step_by(2)
                .take(n_heads - lower),
        );
        slopes
    }
}

/// Distance-proportional additive attention biases, one `[t, t]` matrix per
/// head: `bias[i][j] = -slope * |i - j|`. Symmetric in past and future
/// offsets, so attention stays bidirectional.
pub fn alibi_bias(n_heads: usize, t: usize) -> Vec<Tensor> {
    alibi_slopes(n_heads)
        .into_iter()
        .map(|m| {
            let mut data = vec![0.0; t * t];
            for i in 0..t {
                for j in 0..t {
                    data[i * t + j] = -m * (i as f64 - j as f64).abs();
                }
            }
            Tensor::new_unchecked(vec![t, t], data)
        })
        .collect()
}

/// Scaled dot-product attention over one head with an additive bias matrix:
/// `softmax(q k^T / sqrt(dk) + bias) v`.
pub fn attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    bias: NodeId,
) -> Result<NodeId, NdError> {
    let dk = g.value(q).shape()[1];
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let biased = g.add(scaled, bias)?;
    let weights = g.softmax(biased)?;
    g.matmul(weights, v)
}

/// Projection and normalization parameters of one encoder layer, already
/// bound to graph nodes.
pub struct EncoderLayerNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub ln1_gamma: NodeId,
    pub ln1_beta: NodeId,
    pub ff_w1: NodeId,
    pub ff_b1: NodeId,
    pub ff_w2: NodeId,
    pub ff_b2: NodeId,
    pub ln2_gamma: NodeId,
    pub ln2_beta: NodeId,
}

/// Multi-head attention with per-head additive biases; `x: [t, d]`,
/// projections `[d, d]`, `d` divisible by the head count.
pub fn multi_head_attention(
    g: &mut Graph,
    x: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
    biases: &[NodeId],
    n_heads: usize,
) -> Result<NodeId, NdError> {
    let d = g.value(x).shape()[1];
    if n_heads == 0 || d % n_heads != 0 {
        return Err(NdError::invalid(
            "multi_head_attention",
            format!("width {d} not divisible by {n_heads} heads"),
        ));
    }
    if biases.len() != n_heads {
        return Err(NdError::invalid(
            "multi_head_attention",
            format!("{} bias matrices for {n_heads} heads", biases.len()),
        ));
    }
    let dh = d / n_heads;
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        heads.push(attention(g, qh, kh, vh, biases[h])?);
    }
    let cat = g.concat_cols(&heads)?;
    g.matmul(cat, wo)
}

/// Stacks `[1, d]` rows into a `[n, d]` matrix. Column concatenation is the
/// only joining primitive, so this routes through a double transpose.
pub fn stack_rows(g: &mut Graph, rows: &[NodeId]) -> Result<NodeId, NdError> {
    if rows.is_empty() {
        return Err(NdError::Invalid { op: "stack_rows", msg: "no rows to stack".into() });
    }
    let mut cols = Vec::with_capacity(rows.len());
    for &r in rows {
        let shape = g.value(r).shape();
        if shape.len() != 2 || shape[0] != 1 {
            return Err(NdError::Invalid {
                op: "stack_rows",
                msg: format!("rows must be [1, d], got {shape:?}"),
            });
        }
        cols.push(g.transpose(r)?);
    }
    let wide = g.concat_cols(&cols)?;
    g.transpose(wide)
}

/// Post-norm transformer encoder layer:
/// `h = LN(x + MHA(x))`, `out = LN(h + W2 gelu(W1 h + b1) + b2)`.
pub fn encoder_layer(
    g: &mut Graph,
    x: NodeId,
    p: &EncoderLayerNodes,
    biases: &[NodeId],
    n_heads: usize,
    ln_eps: f64,
) -> Result<NodeId, NdError> {
    let att = multi_head_attention(g, x, p.wq, p.wk, p.wv, p.wo, biases, n_heads)?;
    let res1 = g.add(x, att)?;
    let h = g.layer_norm(res1, p.ln1_gamma, p.ln1_beta, ln_eps)?;
    let f1 = linear(g, h, p.ff_w1, Some(p.ff_b1))?;
    let f1a = g.gelu(f1)?;
    let f2 = linear(g, f1a, p.ff_w2, Some(p.ff_b2))?;
    let res2 = g.add(h, f2)?;
    g.layer_norm(res2, p.ln2_gamma, p.ln2_beta, ln_eps)
}
