//! Parameter bundles and small graph utilities shared by the sequence
//! models: one post-norm transformer encoder layer's weights, with uniform
//! binding, archiving, and optimizer-ordering helpers.

use ndgrad::nn::EncoderLayerNodes;
use ndgrad::{Graph, NodeId, Tensor};
use rand::Rng;

use crate::archive::{Archive, ArchiveBuilder};
use crate::error::{CoreError, Result};

/// Layer-norm stabilizer used by every encoder layer in this crate.
pub const LN_EPS: f64 = 1e-5;

/// Weights of one post-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

/// Archive entry names, in the fixed parameter order used everywhere.
const ENCODER_NAMES: [&str; 12] = [
    "wq", "wk", "wv", "wo", "ln1_gamma", "ln1_beta", "ff_w1", "ff_b1", "ff_w2", "ff_b2",
    "ln2_gamma", "ln2_beta",
];

impl EncoderParams {
    /// Fresh layer of width `d` with a feed-forward width `ff`; projection
    /// weights are scaled for unit-variance activations, norms start at
    /// identity.
    pub fn seeded(d: usize, ff: usize, rng: &mut impl Rng) -> Self {
        let wd = (d as f64).powf(-0.5);
        let wf = (ff as f64).powf(-0.5);
        EncoderParams {
            wq: Tensor::randn(&[d, d], wd, rng),
            wk: Tensor::randn(&[d, d], wd, rng),
            wv: Tensor::randn(&[d, d], wd, rng),
            wo: Tensor::randn(&[d, d], wd, rng),
            ln1_gamma: Tensor::filled(&[d], 1.0),
            ln1_beta: Tensor::zeros(&[d]),
            ff_w1: Tensor::randn(&[d, ff], wd, rng),
            ff_b1: Tensor::zeros(&[ff]),
            ff_w2: Tensor::randn(&[ff, d], wf, rng),
            ff_b2: Tensor::zeros(&[d]),
            ln2_gamma: Tensor::filled(&[d], 1.0),
            ln2_beta: Tensor::zeros(&[d]),
        }
    }

    pub fn width(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn ff_width(&self) -> usize {
        self.ff_w1.shape()[1]
    }

    /// Tensors in the fixed order, paired with their archive names.
    pub fn entries(&self) -> [(&'static str, &Tensor); 12] {
        [
            (ENCODER_NAMES[0], &self.wq),
            (ENCODER_NAMES[1], &self.wk),
            (ENCODER_NAMES[2], &self.wv),
            (ENCODER_NAMES[3], &self.wo),
            (ENCODER_NAMES[4], &self.ln1_gamma),
            (ENCODER_NAMES[5], &self.ln1_beta),
            (ENCODER_NAMES[6], &self.ff_w1),
            (ENCODER_NAMES[7], &self.ff_b1),
            (ENCODER_NAMES[8], &self.ff_w2),
            (ENCODER_NAMES[9], &self.ff_b2),
            (ENCODER_NAMES[10], &self.ln2_gamma),
            (ENCODER_NAMES[11], &self.ln2_beta),
        ]
    }

    /// Mutable tensors in the same fixed order; the optimizer contract.
    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ff_w1,
            &mut self.ff_b1,
            &mut self.ff_w2,
            &mut self.ff_b2,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }

    /// Binds every tensor into the graph: as inputs when `trainable` so
    /// gradients accumulate, as constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> EncoderLayerNodes {
        let mut put = |t: &Tensor| {
            if trainable {
                g.input(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        EncoderLayerNodes {
            wq: put(&self.wq),
            wk: put(&self.wk),
            wv: put(&self.wv),
            wo: put(&self.wo),
            ln1_gamma: put(&self.ln1_gamma),
            ln1_beta: put(&self.ln1_beta),
            ff_w1: put(&self.ff_w1),
            ff_b1: put(&self.ff_b1),
            ff_w2: put(&self.ff_w2),
            ff_b2: put(&self.ff_b2),
            ln2_gamma: put(&self.ln2_gamma),
            ln2_beta: put(&self.ln2_beta),
        }
    }

    /// Node ids of a bound layer, in the same order as [`Self::tensors_mut`].
    pub fn nodes_of(n: &EncoderLayerNodes) -> [NodeId; 12] {
        [
            n.wq, n.wk, n.wv, n.wo, n.ln1_gamma, n.ln1_beta, n.ff_w1, n.ff_b1, n.ff_w2, n.ff_b2,
            n.ln2_gamma, n.ln2_beta,
        ]
    }

    /// Appends all tensors under `prefix.name` entries.
    pub fn archive_into(&self, mut b: ArchiveBuilder, prefix: &str) -> ArchiveBuilder {
        for (name, t) in self.entries() {
            b = b.tensor(&format!("{prefix}.{name}"), t);
        }
        b
    }

    /// Reads a layer back and validates that the twelve shapes describe one
    /// consistent `(d, ff)` pair.
    pub fn from_archive(a: &Archive, prefix: &str) -> Result<Self> {
        let get = |name: &str| a.tensor(&format!("{prefix}.{name}"));
        let p = EncoderParams {
            wq: get(ENCODER_NAMES[0])?,
            wk: get(ENCODER_NAMES[1])?,
            wv: get(ENCODER_NAMES[2])?,
            wo: get(ENCODER_NAMES[3])?,
            ln1_gamma: get(ENCODER_NAMES[4])?,
            ln1_beta: get(ENCODER_NAMES[5])?,
            ff_w1: get(ENCODER_NAMES[6])?,
            ff_b1: get(ENCODER_NAMES[7])?,
            ff_w2: get(ENCODER_NAMES[8])?,
            ff_b2: get(ENCODER_NAMES[9])?,
            ln2_gamma: get(ENCODER_NAMES[10])?,
            ln2_beta: get(ENCODER_NAMES[11])?,
        };
        let d = p.wq.shape().first().copied().unwrap_or(0);
        let ff = p.ff_w1.shape().get(1).copied().unwrap_or(0);
        if d == 0 || ff == 0 {
            return Err(CoreError::invalid(format!(
                "encoder layer {prefix}: degenerate widths {d}x{ff}"
            )));
        }
        let square = [&p.wq, &p.wk, &p.wv, &p.wo];
        if square.iter().any(|t| t.shape() != [d, d]) {
            return Err(CoreError::invalid(format!(
                "encoder layer {prefix}: projection shapes disagree with width {d}"
            )));
        }
        let rows = [&p.ln1_gamma, &p.ln1_beta, &p.ff_b2, &p.ln2_gamma, &p.ln2_beta];
        if rows.iter().any(|t| t.shape() != [d]) {
            return Err(CoreError::invalid(format!(
                "encoder layer {prefix}: norm or bias shapes disagree with width {d}"
            )));
        }
        if p.ff_w1.shape() != [d, ff] || p.ff_b1.shape() != [ff] || p.ff_w2.shape() != [ff, d] {
            return Err(CoreError::invalid(format!(
                "encoder layer {prefix}: feed-forward shapes disagree with {d}x{ff}"
            )));
        }
        Ok(p)
    }
}

/// Stacks `[1, d]` rows into a `[T, d]` node.
pub fn stack_rows(g: &mut Graph, rows: &[NodeId]) -> Result<NodeId> {
    if rows.is_empty() {
        return Err(CoreError::invalid("cannot stack zero rows"));
    }
    let d = g.value(rows[0]).shape().to_vec();
    if d.len() != 2 || d[0] != 1 {
        return Err(CoreError::invalid(format!("stack_rows wants [1, d] rows, got {d:?}")));
    }
    let mut cols = Vec::with_capacity(rows.len());
    for &r in rows {
        cols.push(g.transpose(r)?);
    }
    let cat = g.concat_cols(&cols)?;
    Ok(g.transpose(cat)?)
}
