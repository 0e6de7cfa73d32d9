//! Temporal VAE prior over face-motion sequences.
//!
//! The encoder squeezes a `[T, MOTION_DIM]` track through three stride-2
//! temporal convolutions into `T/q` latent frames, runs one bidirectional
//! attention layer, and emits per-latent-frame means and log-variances. The
//! decoder mirrors it: one attention layer, three stride-2 transposed
//! convolutions, and a linear head back to motion parameters. Training
//! balances vertex-space reconstruction against a standard normal prior on
//! the latents; the trained decoder later serves as a frozen vocabulary of
//! plausible motion for the animation regressor, which is why the decoder
//! call counter exists: downstream decoding must hit it exactly once per
//! generated sequence.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use ndgrad::nn::{alibi_bias, encoder_layer, linear};
use ndgrad::{Adam, AdamConfig, Graph, NodeId, Tensor};

use crate::archive::{Archive, ArchiveBuilder};
use crate::blocks::{EncoderParams, LN_EPS};
use crate::error::{CoreError, Result};
use crate::face::{bind_face, synthesize_node, FaceAssets, MOTION_DIM};
use crate::seeds::{self, derive_seed};
use crate::synthdata::Dataset;

const CHECKPOINT_VERSION: u32 = 1;
/// Stride-2 temporal conv/deconv stages on each side.
const CONV_STAGES: usize = 3;

/// Architecture record; stored in the checkpoint manifest so a file is
/// self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorHyper {
    /// Temporal compression factor: motion frames per latent frame.
    pub q: usize,
    /// Latent width per latent frame.
    pub latent: usize,
    /// Conv channel and attention width.
    pub width: usize,
    pub heads: usize,
    pub ff: usize,
    /// Temporal kernel size; odd so the stride-2 stages halve lengths
    /// exactly.
    pub kernel: usize,
}

impl Default for PriorHyper {
    fn default() -> Self {
        PriorHyper {
            q: 8,
            latent: 128,
            width: 128,
            heads: 4,
            ff: 256,
            kernel: 3,
        }
    }
}

impl PriorHyper {
    fn validate(&self) -> Result<()> {
        if self.q != 1 << CONV_STAGES {
            return Err(CoreError::invalid(format!(
                "q = {} impossible: {CONV_STAGES} stride-2 stages compress by {}",
                self.q,
                1 << CONV_STAGES
            )));
        }
        if self.latent != self.width {
            return Err(CoreError::invalid(format!(
                "latent width {} must match attention width {}; the decoder feeds latents \
                 straight into its attention layer",
                self.latent, self.width
            )));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(CoreError::invalid(format!(
                "kernel {} must be odd so lengths halve exactly",
                self.kernel
            )));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(CoreError::invalid(format!(
                "width {} not divisible into {} heads",
                self.width, self.heads
            )));
        }
        if self.ff == 0 {
            return Err(CoreError::invalid("feed-forward width must be positive"));
        }
        Ok(())
    }

    fn conv_pad(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

/// Loss weights; reconstruction dominates by design and the KL weight may be
/// zero, which degenerates the model to a plain autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorLossWeights {
    pub rec: f64,
    pub kl: f64,
}

impl Default for PriorLossWeights {
    fn default() -> Self {
        PriorLossWeights { rec: 1e6, kl: 1e-3 }
    }
}

impl PriorLossWeights {
    fn validate(&self) -> Result<()> {
        if !(self.rec > 0.0) || !(self.kl >= 0.0) || !self.kl.is_finite() || !self.rec.is_finite()
        {
            return Err(CoreError::invalid(format!(
                "loss weights need rec > 0 and kl >= 0, got rec {} kl {}",
                self.rec, self.kl
            )));
        }
        Ok(())
    }
}

/// Temporal VAE over motion tracks. Weights are plain tensors; the decoder
/// call counter is shared instrumentation, not model state, and does not
/// survive checkpoints.
#[derive(Debug)]
pub struct MotionPrior {
    pub hyper: PriorHyper,
    /// Seed recorded by training; zero for freshly seeded untrained models.
    pub train_seed: u64,
    pub enc_conv_w: [Tensor; CONV_STAGES],
    pub enc_conv_b: [Tensor; CONV_STAGES],
    pub enc_layer: EncoderParams,
    pub mu_w: Tensor,
    pub mu_b: Tensor,
    pub logvar_w: Tensor,
    pub logvar_b: Tensor,
    pub dec_layer: EncoderParams,
    pub dec_conv_w: [Tensor; CONV_STAGES],
    pub dec_conv_b: [Tensor; CONV_STAGES],
    pub out_w: Tensor,
    pub out_b: Tensor,
    calls: Arc<AtomicU64>,
}

impl Clone for MotionPrior {
    fn clone(&self) -> Self {
        MotionPrior {
            hyper: self.hyper.clone(),
            train_seed: self.train_seed,
            enc_conv_w: self.enc_conv_w.clone(),
            enc_conv_b: self.enc_conv_b.clone(),
            enc_layer: self.enc_layer.clone(),
            mu_w: self.mu_w.clone(),
            mu_b: self.mu_b.clone(),
            logvar_w: self.logvar_w.clone(),
            logvar_b: self.logvar_b.clone(),
            dec_layer: self.dec_layer.clone(),
            dec_conv_w: self.dec_conv_w.clone(),
            dec_conv_b: self.dec_conv_b.clone(),
            out_w: self.out_w.clone(),
            out_b: self.out_b.clone(),
            // A clone is a new model as far as instrumentation goes.
            calls: Arc::new(AtomicU64::new(0)),
        }
    }
}

/// Prior weights bound into a graph.
pub struct BoundPrior {
    pub enc_conv_w: [NodeId; CONV_STAGES],
    pub enc_conv_b: [NodeId; CONV_STAGES],
    pub enc_layer: ndgrad::nn::EncoderLayerNodes,
    pub mu_w: NodeId,
    pub mu_b: NodeId,
    pub logvar_w: NodeId,
    pub logvar_b: NodeId,
    pub dec_layer: ndgrad::nn::EncoderLayerNodes,
    pub dec_conv_w: [NodeId; CONV_STAGES],
    pub dec_conv_b: [NodeId; CONV_STAGES],
    pub out_w: NodeId,
    pub out_b: NodeId,
    hyper: PriorHyper,
    calls: Arc<AtomicU64>,
}

impl BoundPrior {
    /// Node ids in the same order as [`MotionPrior::param_list`].
    pub fn node_list(&self) -> Vec<NodeId> {
        let mut v = Vec::new();
        for i in 0..CONV_STAGES {
            v.push(self.enc_conv_w[i]);
            v.push(self.enc_conv_b[i]);
        }
        v.extend(EncoderParams::nodes_of(&self.enc_layer));
        v.extend([self.mu_w, self.mu_b, self.logvar_w, self.logvar_b]);
        v.extend(EncoderParams::nodes_of(&self.dec_layer));
        for i in 0..CONV_STAGES {
            v.push(self.dec_conv_w[i]);
            v.push(self.dec_conv_b[i]);
        }
        v.extend([self.out_w, self.out_b]);
        v
    }
}

impl MotionPrior {
    pub fn seeded(hyper: PriorHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = seeds::rng(derive_seed(seed, "prior-init", 0));
        let (k, w, latent) = (hyper.kernel, hyper.width, hyper.latent);
        let conv = |cin: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let std = ((k * cin) as f64).powf(-0.5);
            Tensor::randn(&[k, cin, w], std, rng)
        };
        let wh = (w as f64).powf(-0.5);
        let enc_conv_w = [
            conv(MOTION_DIM, &mut rng),
            conv(w, &mut rng),
            conv(w, &mut rng),
        ];
        let enc_layer = EncoderParams::seeded(w, hyper.ff, &mut rng);
        let mu_w = Tensor::randn(&[w, latent], wh, &mut rng);
        let dec_layer = EncoderParams::seeded(latent, hyper.ff, &mut rng);
        let dec_conv_w = [conv(latent, &mut rng), conv(w, &mut rng), conv(w, &mut rng)];
        let out_w = Tensor::randn(&[w, MOTION_DIM], wh, &mut rng);
        Ok(MotionPrior {
            train_seed: 0,
            enc_conv_w,
            enc_conv_b: std::array::from_fn(|_| Tensor::zeros(&[w])),
            enc_layer,
            mu_w,
            mu_b: Tensor::zeros(&[latent]),
            // Zero log-variance head: sigma starts at exactly one, so the
            // prior term starts near its minimum instead of swamping early
            // reconstruction steps.
            logvar_w: Tensor::zeros(&[w, latent]),
            logvar_b: Tensor::zeros(&[latent]),
            dec_layer,
            dec_conv_w,
            dec_conv_b: std::array::from_fn(|_| Tensor::zeros(&[w])),
            out_w,
            out_b: Tensor::zeros(&[MOTION_DIM]),
            calls: Arc::new(AtomicU64::new(0)),
            hyper,
        })
    }

    /// Mutable weights in the fixed optimizer order.
    pub fn param_list(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        for (w, b) in self.enc_conv_w.iter_mut().zip(&mut self.enc_conv_b) {
            v.push(w);
            v.push(b);
        }
        v.extend(self.enc_layer.tensors_mut());
        v.extend([
            &mut self.mu_w,
            &mut self.mu_b,
            &mut self.logvar_w,
            &mut self.logvar_b,
        ]);
        v.extend(self.dec_layer.tensors_mut());
        for (w, b) in self.dec_conv_w.iter_mut().zip(&mut self.dec_conv_b) {
            v.push(w);
            v.push(b);
        }
        v.extend([&mut self.out_w, &mut self.out_b]);
        v
    }

    /// Binds weights as inputs when `trainable`, constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundPrior {
        fn put(g: &mut Graph, t: &Tensor, trainable: bool) -> NodeId {
            if trainable {
                g.input(t.clone())
            } else {
                g.constant(t.clone())
            }
        }
        BoundPrior {
            enc_conv_w: std::array::from_fn(|i| put(g, &self.enc_conv_w[i], trainable)),
            enc_conv_b: std::array::from_fn(|i| put(g, &self.enc_conv_b[i], trainable)),
            enc_layer: self.enc_layer.bind(g, trainable),
            mu_w: put(g, &self.mu_w, trainable),
            mu_b: put(g, &self.mu_b, trainable),
            logvar_w: put(g, &self.logvar_w, trainable),
            logvar_b: put(g, &self.logvar_b, trainable),
            dec_layer: self.dec_layer.bind(g, trainable),
            dec_conv_w: std::array::from_fn(|i| put(g, &self.dec_conv_w[i], trainable)),
            dec_conv_b: std::array::from_fn(|i| put(g, &self.dec_conv_b[i], trainable)),
            out_w: put(g, &self.out_w, trainable),
            out_b: put(g, &self.out_b, trainable),
            hyper: self.hyper.clone(),
            calls: Arc::clone(&self.calls),
        }
    }

    /// Decoder invocations so far, shared across bindings of this model.
    pub fn decode_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = PriorMeta {
            format_version: CHECKPOINT_VERSION,
            hyper: self.hyper.clone(),
            train_seed: self.train_seed,
        };
        let b = ArchiveBuilder::new("motion-prior").meta(serde_json::to_value(&meta)?);
        self.archive_tensors(b, "").write(path)
    }

    /// Appends every weight under `prefix`, letting other checkpoints embed
    /// a frozen copy of this model.
    pub(crate) fn archive_tensors(&self, mut b: ArchiveBuilder, prefix: &str) -> ArchiveBuilder {
        for i in 0..CONV_STAGES {
            b = b
                .tensor(&format!("{prefix}enc_conv{i}_w"), &self.enc_conv_w[i])
                .tensor(&format!("{prefix}enc_conv{i}_b"), &self.enc_conv_b[i]);
        }
        let b = self.enc_layer.archive_into(b, &format!("{prefix}enc_layer"));
        let b = b
            .tensor(&format!("{prefix}mu_w"), &self.mu_w)
            .tensor(&format!("{prefix}mu_b"), &self.mu_b)
            .tensor(&format!("{prefix}logvar_w"), &self.logvar_w)
            .tensor(&format!("{prefix}logvar_b"), &self.logvar_b);
        let mut b = self.dec_layer.archive_into(b, &format!("{prefix}dec_layer"));
        for i in 0..CONV_STAGES {
            b = b
                .tensor(&format!("{prefix}dec_conv{i}_w"), &self.dec_conv_w[i])
                .tensor(&format!("{prefix}dec_conv{i}_b"), &self.dec_conv_b[i]);
        }
        b.tensor(&format!("{prefix}out_w"), &self.out_w)
            .tensor(&format!("{prefix}out_b"), &self.out_b)
    }

    /// Reads weights written by [`archive_tensors`] and validates every
    /// shape against the architecture.
    pub(crate) fn tensors_from_archive(
        a: &Archive,
        prefix: &str,
        hyper: PriorHyper,
        train_seed: u64,
    ) -> Result<Self> {
        let path = a.path();
        hyper.validate().map_err(|e| {
            CoreError::archive(path, format!("stored architecture is invalid: {e}"))
        })?;
        let (k, w, latent) = (hyper.kernel, hyper.width, hyper.latent);
        let grab = |group: &str, i: usize| -> Result<(Tensor, Tensor)> {
            Ok((
                a.tensor(&format!("{prefix}{group}{i}_w"))?,
                a.tensor(&format!("{prefix}{group}{i}_b"))?,
            ))
        };
        let mut enc_w = Vec::new();
        let mut enc_b = Vec::new();
        let mut dec_w = Vec::new();
        let mut dec_b = Vec::new();
        for i in 0..CONV_STAGES {
            let (cw, cb) = grab("enc_conv", i)?;
            enc_w.push(cw);
            enc_b.push(cb);
            let (cw, cb) = grab("dec_conv", i)?;
            dec_w.push(cw);
            dec_b.push(cb);
        }
        let model = MotionPrior {
            hyper,
            train_seed,
            enc_conv_w: enc_w.try_into().expect("stage count"),
            enc_conv_b: enc_b.try_into().expect("stage count"),
            enc_layer: EncoderParams::from_archive(a, &format!("{prefix}enc_layer"))?,
            mu_w: a.tensor(&format!("{prefix}mu_w"))?,
            mu_b: a.tensor(&format!("{prefix}mu_b"))?,
            logvar_w: a.tensor(&format!("{prefix}logvar_w"))?,
            logvar_b: a.tensor(&format!("{prefix}logvar_b"))?,
            dec_layer: EncoderParams::from_archive(a, &format!("{prefix}dec_layer"))?,
            dec_conv_w: dec_w.try_into().expect("stage count"),
            dec_conv_b: dec_b.try_into().expect("stage count"),
            out_w: a.tensor(&format!("{prefix}out_w"))?,
            out_b: a.tensor(&format!("{prefix}out_b"))?,
            calls: Arc::new(AtomicU64::new(0)),
        };
        let check = |name: &str, got: &[usize], want: &[usize]| -> Result<()> {
            if got != want {
                return Err(CoreError::archive(
                    path,
                    format!("{prefix}{name} has shape {got:?}, expected {want:?}"),
                ));
            }
            Ok(())
        };
        check("enc_conv0_w", model.enc_conv_w[0].shape(), &[k, MOTION_DIM, w])?;
        for i in 1..CONV_STAGES {
            check(&format!("enc_conv{i}_w"), model.enc_conv_w[i].shape(), &[k, w, w])?;
        }
        check("dec_conv0_w", model.dec_conv_w[0].shape(), &[k, latent, w])?;
        for i in 1..CONV_STAGES {
            check(&format!("dec_conv{i}_w"), model.dec_conv_w[i].shape(), &[k, w, w])?;
        }
        for i in 0..CONV_STAGES {
            check(&format!("enc_conv{i}_b"), model.enc_conv_b[i].shape(), &[w])?;
            check(&format!("dec_conv{i}_b"), model.dec_conv_b[i].shape(), &[w])?;
        }
        check("mu_w", model.mu_w.shape(), &[w, latent])?;
        check("mu_b", model.mu_b.shape(), &[latent])?;
        check("logvar_w", model.logvar_w.shape(), &[w, latent])?;
        check("logvar_b", model.logvar_b.shape(), &[latent])?;
        check("out_w", model.out_w.shape(), &[w, MOTION_DIM])?;
        check("out_b", model.out_b.shape(), &[MOTION_DIM])?;
        if model.enc_layer.width() != w || model.dec_layer.width() != latent {
            return Err(CoreError::archive(path, "attention widths disagree with manifest"));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::read(path)?;
        a.expect_kind("motion-prior")?;
        let meta: PriorMeta = a.meta_as()?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(CoreError::archive(
                path,
                format!("unsupported checkpoint version {}", meta.format_version),
            ));
        }
        Self::tensors_from_archive(&a, "", meta.hyper, meta.train_seed)
    }
}

#[derive(Serialize, Deserialize)]
struct PriorMeta {
    format_version: u32,
    hyper: PriorHyper,
    train_seed: u64,
}

/// Encoder over a `[T, MOTION_DIM]` node with T a positive multiple of q.
/// Returns per-latent-frame `(mu, logvar)`, each `[T/q, latent]`.
pub fn encoder_nodes(g: &mut Graph, m: &BoundPrior, motion: NodeId) -> Result<(NodeId, NodeId)> {
    let shape = g.value(motion).shape().to_vec();
    if shape.len() != 2 || shape[1] != MOTION_DIM {
        return Err(CoreError::invalid(format!(
            "motion must be [T, {MOTION_DIM}], got {shape:?}"
        )));
    }
    let t = shape[0];
    if t < m.hyper.q {
        return Err(CoreError::invalid(format!(
            "{t} frames cannot fill one latent frame of {} motion frames",
            m.hyper.q
        )));
    }
    if t % m.hyper.q != 0 {
        return Err(CoreError::invalid(format!(
            "graph encoder needs T divisible by {}, got {t}; pad upstream",
            m.hyper.q
        )));
    }
    let pad = m.hyper.conv_pad();
    let mut x = motion;
    for i in 0..CONV_STAGES {
        x = g.conv1d(x, m.enc_conv_w[i], 2, pad)?;
        x = g.add_row(x, m.enc_conv_b[i])?;
        x = g.gelu(x)?;
    }
    let l = t / m.hyper.q;
    let biases: Vec<NodeId> = alibi_bias(m.hyper.heads, l)
        .into_iter()
        .map(|b| g.constant(b))
        .collect();
    let h = encoder_layer(g, x, &m.enc_layer, &biases, m.hyper.heads, LN_EPS)?;
    let mu = linear(g, h, m.mu_w, Some(m.mu_b))?;
    let logvar = linear(g, h, m.logvar_w, Some(m.logvar_b))?;
    Ok((mu, logvar))
}

/// Decoder over a `[L, latent]` node; returns `[q*L, MOTION_DIM]`. Counts as
/// one decoder invocation however long the sequence is.
pub fn decoder_nodes(g: &mut Graph, m: &BoundPrior, z: NodeId) -> Result<NodeId> {
    let shape = g.value(z).shape().to_vec();
    if shape.len() != 2 || shape[1] != m.hyper.latent || shape[0] == 0 {
        return Err(CoreError::invalid(format!(
            "latents must be [L, {}] with L >= 1, got {shape:?}",
            m.hyper.latent
        )));
    }
    m.calls.fetch_add(1, Ordering::Relaxed);
    let l = shape[0];
    let biases: Vec<NodeId> = alibi_bias(m.hyper.heads, l)
        .into_iter()
        .map(|b| g.constant(b))
        .collect();
    let mut x = encoder_layer(g, z, &m.dec_layer, &biases, m.hyper.heads, LN_EPS)?;
    let pad = m.hyper.conv_pad();
    for i in 0..CONV_STAGES {
        x = g.conv_transpose1d(x, m.dec_conv_w[i], 2, pad, 1)?;
        x = g.add_row(x, m.dec_conv_b[i])?;
        x = g.gelu(x)?;
    }
    Ok(linear(g, x, m.out_w, Some(m.out_b))?)
}

/// Right-pads a motion track to a multiple of q by repeating the final
/// frame. Returns the track untouched when it already fits.
pub fn pad_motion(motion: &Tensor, q: usize) -> Result<Tensor> {
    let shape = motion.shape();
    if shape.len() != 2 {
        return Err(CoreError::invalid(format!("motion must be 2-D, got {shape:?}")));
    }
    let (t, d) = (shape[0], shape[1]);
    if t == 0 {
        return Err(CoreError::invalid("empty motion track"));
    }
    if t % q == 0 {
        return Ok(motion.clone());
    }
    let padded = t + q - t % q;
    let mut data = motion.data().to_vec();
    let last = motion.data()[(t - 1) * d..].to_vec();
    for _ in t..padded {
        data.extend_from_slice(&last);
    }
    Ok(Tensor::from_vec(&[padded, d], data)?)
}

/// Plain encode of a motion track; tracks shorter than q are an error,
/// other lengths are right-padded to a multiple of q by repeating the last
/// frame. Returns `(mu, sigma)`, each `[ceil(T/q), latent]`.
pub fn encode(model: &MotionPrior, motion: &Tensor) -> Result<(Tensor, Tensor)> {
    let shape = motion.shape();
    if shape.len() != 2 || shape[1] != MOTION_DIM {
        return Err(CoreError::invalid(format!(
            "motion must be [T, {MOTION_DIM}], got {shape:?}"
        )));
    }
    if shape[0] < model.hyper.q {
        return Err(CoreError::invalid(format!(
            "{} frames cannot fill one latent frame of {} motion frames",
            shape[0], model.hyper.q
        )));
    }
    let padded = pad_motion(motion, model.hyper.q)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let input = g.constant(padded);
    let (mu_n, logvar_n) = encoder_nodes(&mut g, &bound, input)?;
    let mu = g.value(mu_n).clone();
    let logvar = g.value(logvar_n);
    let sigma_data: Vec<f64> = logvar.data().iter().map(|lv| (0.5 * lv).exp()).collect();
    let sigma = Tensor::from_vec(logvar.shape(), sigma_data)?;
    Ok((mu, sigma))
}

/// `z = sigma * eps + mu` with standard normal noise drawn row-major from
/// the seeded generator, so a fixed seed gives a fixed draw.
pub fn reparameterize(mu: &Tensor, sigma: &Tensor, seed: u64) -> Result<Tensor> {
    if mu.shape() != sigma.shape() {
        return Err(CoreError::invalid(format!(
            "mu shape {:?} and sigma shape {:?} differ",
            mu.shape(),
            sigma.shape()
        )));
    }
    let mut rng = seeds::rng(seed);
    let eps = Tensor::randn(mu.shape(), 1.0, &mut rng);
    let data: Vec<f64> = mu
        .data()
        .iter()
        .zip(sigma.data())
        .zip(eps.data())
        .map(|((m, s), e)| s * e + m)
        .collect();
    Ok(Tensor::from_vec(mu.shape(), data)?)
}

/// Plain decode of `[L, latent]` latents to `[q*L, MOTION_DIM]` motion.
pub fn decode(model: &MotionPrior, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let input = g.constant(z.clone());
    let out = decoder_nodes(&mut g, &bound, input)?;
    Ok(g.value(out).clone())
}

/// Prior-matching term from mean and log-variance nodes: the analytic
/// divergence from a standard normal, summed over every latent entry.
pub fn kl_node(g: &mut Graph, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
    let var = g.exp(logvar)?;
    let mu2 = g.mul(mu, mu)?;
    let a = g.add(var, mu2)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_const(b, -1.0)?;
    let total = g.sum_all(c)?;
    Ok(g.scale(total, 0.5)?)
}

/// Plain divergence of per-latent-frame `(mu, sigma)` from a standard
/// normal: `0.5 * sum(sigma^2 + mu^2 - log sigma^2 - 1)`.
pub fn kl_loss(mu: &Tensor, sigma: &Tensor) -> Result<f64> {
    if mu.shape() != sigma.shape() {
        return Err(CoreError::invalid(format!(
            "mu shape {:?} and sigma shape {:?} differ",
            mu.shape(),
            sigma.shape()
        )));
    }
    let mut total = 0.0;
    for (m, s) in mu.data().iter().zip(sigma.data()) {
        if !(*s > 0.0) {
            return Err(CoreError::invalid(format!("sigma must be positive, got {s}")));
        }
        let s2 = s * s;
        total += s2 + m * m - s2.ln() - 1.0;
    }
    Ok(0.5 * total)
}

/// Vertex-space reconstruction error: synthesize both motion tracks with
/// the same identity and average squared coordinate differences over every
/// frame, vertex, and axis.
pub fn rec_loss(
    assets: &FaceAssets,
    beta: &[f64],
    motion_hat: &Tensor,
    motion_gt: &Tensor,
) -> Result<f64> {
    if motion_hat.shape() != motion_gt.shape() {
        return Err(CoreError::invalid(format!(
            "motion shapes {:?} and {:?} differ",
            motion_hat.shape(),
            motion_gt.shape()
        )));
    }
    let hat = assets.synthesize_sequence(beta, motion_hat)?;
    let gt = assets.synthesize_sequence(beta, motion_gt)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in hat.iter().zip(&gt) {
        for (x, y) in a.data().iter().zip(b.data()) {
            let d = x - y;
            total += d * d;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Frames per training crop; 0 trains on full sequences.
    pub crop: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        PriorTrainConfig {
            epochs: 100,
            batch: 4,
            crop: 32,
            lr: 1e-4,
            seed: 42,
        }
    }
}

/// Per-epoch mean loss components, already multiplied by their weights, so
/// `total = rec + kl` pointwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorReport {
    pub total: Vec<f64>,
    pub rec: Vec<f64>,
    pub kl: Vec<f64>,
}

/// Trains the prior on the training split. Deterministic for a fixed
/// config; a non-finite loss aborts with a diagnostic instead of silently
/// producing a broken model.
pub fn train_prior(
    assets: &FaceAssets,
    data: &Dataset,
    weights: &PriorLossWeights,
    cfg: &PriorTrainConfig,
) -> Result<(MotionPrior, PriorReport)> {
    weights.validate()?;
    if cfg.epochs == 0 {
        return Err(CoreError::invalid("prior training needs at least one epoch"));
    }
    if cfg.batch == 0 {
        return Err(CoreError::invalid("batch size must be positive"));
    }
    if !(cfg.lr > 0.0) {
        return Err(CoreError::invalid(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if data.train.is_empty() {
        return Err(CoreError::invalid("no training samples"));
    }
    let hyper = PriorHyper::default();
    for &i in &data.train {
        let frames = data.records[i].motion.shape()[0];
        let span = if cfg.crop == 0 { frames } else { cfg.crop };
        if frames < span {
            return Err(CoreError::invalid(format!(
                "sample {i} has {frames} frames, shorter than the {span}-frame crop"
            )));
        }
        if span % hyper.q != 0 || span < hyper.q {
            return Err(CoreError::invalid(format!(
                "crop of {span} frames is not a positive multiple of q = {}",
                hyper.q
            )));
        }
    }

    let mut model = MotionPrior::seeded(hyper.clone(), cfg.seed)?;
    model.train_seed = cfg.seed;
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut report = PriorReport {
        total: Vec::with_capacity(cfg.epochs),
        rec: Vec::with_capacity(cfg.epochs),
        kl: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let mut rng = seeds::rng_for(cfg.seed, "prior-epoch", epoch as u64);
        let mut order = data.train.clone();
        order.shuffle(&mut rng);
        let mut epoch_rec = 0.0;
        let mut epoch_kl = 0.0;
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let ids = bound.node_list();
            let mut rec_terms = Vec::with_capacity(chunk.len());
            let mut kl_terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let rec = &data.records[i];
                let frames = rec.motion.shape()[0];
                let span = if cfg.crop == 0 { frames } else { cfg.crop };
                let start = rng.gen_range(0..=frames - span);
                let crop = Tensor::from_vec(
                    &[span, MOTION_DIM],
                    rec.motion.data()[start * MOTION_DIM..(start + span) * MOTION_DIM].to_vec(),
                )?;
                let gt_meshes = assets.synthesize_sequence(&rec.beta, &crop)?;
                let noise = Tensor::randn(&[span / hyper.q, hyper.latent], 1.0, &mut rng);

                let input = g.constant(crop);
                let (mu, logvar) = encoder_nodes(&mut g, &bound, input)?;
                let half = g.scale(logvar, 0.5)?;
                let sigma = g.exp(half)?;
                let eps = g.constant(noise);
                let scaled = g.mul(sigma, eps)?;
                let z = g.add(scaled, mu)?;
                let hat = decoder_nodes(&mut g, &bound, z)?;

                let face = bind_face(&mut g, assets, &rec.beta)?;
                let mut sq_sum: Option<NodeId> = None;
                for (t, gt) in gt_meshes.iter().enumerate() {
                    let row = g.gather_rows(hat, &[t])?;
                    let mesh = synthesize_node(&mut g, assets, &face, row)?;
                    let target = g.constant(gt.clone());
                    let d = g.sub(mesh, target)?;
                    let sq = g.mul(d, d)?;
                    let s = g.sum_all(sq)?;
                    sq_sum = Some(match sq_sum {
                        Some(acc) => g.add(acc, s)?,
                        None => s,
                    });
                }
                let coords = (span * 3 * assets.n_vertices()) as f64;
                let mse = g.scale(sq_sum.expect("at least one frame"), 1.0 / coords)?;
                rec_terms.push(mse);
                kl_terms.push(kl_node(&mut g, mu, logvar)?);
            }
            let inv = 1.0 / chunk.len() as f64;
            let fold = |g: &mut Graph, terms: &[NodeId], w: f64| -> Result<NodeId> {
                let mut acc = terms[0];
                for t in &terms[1..] {
                    acc = g.add(acc, *t)?;
                }
                Ok(g.scale(acc, w * inv)?)
            };
            let rec_term = fold(&mut g, &rec_terms, weights.rec)?;
            let kl_term = fold(&mut g, &kl_terms, weights.kl)?;
            let loss = g.add(rec_term, kl_term)?;
            let (rec_v, kl_v) = (g.value(rec_term).item(), g.value(kl_term).item());
            if !g.value(loss).item().is_finite() {
                return Err(CoreError::invalid(format!(
                    "training diverged: non-finite loss at epoch {epoch}, step {step} \
                     (rec {rec_v}, kl {kl_v})"
                )));
            }
            epoch_rec += rec_v * chunk.len() as f64;
            epoch_kl += kl_v * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let owned: Vec<Tensor> = ids.iter().map(|id| grads.get_or_zeros(*id, &g)).collect();
            let grad_refs: Vec<&Tensor> = owned.iter().collect();
            let mut params = model.param_list();
            opt.step(&mut params, &grad_refs)?;
        }
        let n = order.len() as f64;
        let (r, k) = (epoch_rec / n, epoch_kl / n);
        report.rec.push(r);
        report.kl.push(k);
        report.total.push(r + k);
    }
    Ok((model, report))
}
