//! Conditioned speech-to-motion regressor over the frozen motion prior.
//!
//! Speech features pass through a trainable linear adapter, every frame is
//! concatenated with a style vector projected from its (possibly soft)
//! condition, blocks of q styled frames are squashed into one latent frame
//! by a single linear layer, and the frozen prior decoder turns the latent
//! sequence into motion. The decoder runs exactly once per animation
//! however long the clip is, and only the adapter, style, and squash
//! weights ever train.
//!
//! Conditions are one-hot blocks for emotion, intensity, and identity.
//! Editing uses per-frame soft conditions from a keyframe timeline; styles
//! are applied per frame before the squash, so the q frames inside one
//! latent block may carry different conditions mid-transition.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ndgrad::nn::linear;
use ndgrad::{Graph, NodeId, Tensor};

use crate::archive::{Archive, ArchiveBuilder};
use crate::error::{CoreError, Result};
use crate::face::{FaceAssets, MOTION_DIM};
use crate::prior::{decoder_nodes, BoundPrior, MotionPrior, PriorHyper};
use crate::seeds::{self, derive_seed};
use crate::synthdata::{N_EMOTIONS, N_INTENSITIES, SPEECH_DIM};

/// Width of the per-frame style vector appended to adapted speech.
pub const STYLE_WIDTH: usize = 16;

const CHECKPOINT_VERSION: u32 = 1;

/// Width of an encoded condition for a model with `n_id` identities.
pub fn condition_width(n_id: usize) -> usize {
    N_EMOTIONS + N_INTENSITIES + n_id
}

/// A hard condition: one class per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub emotion: usize,
    pub intensity: usize,
    pub identity: usize,
}

impl Condition {
    pub fn validate(&self, n_id: usize) -> Result<()> {
        if self.emotion >= N_EMOTIONS {
            return Err(CoreError::invalid(format!(
                "emotion index {} out of range 0..{N_EMOTIONS}",
                self.emotion
            )));
        }
        if self.intensity >= N_INTENSITIES {
            return Err(CoreError::invalid(format!(
                "intensity index {} out of range 0..{N_INTENSITIES}",
                self.intensity
            )));
        }
        if self.identity >= n_id {
            return Err(CoreError::invalid(format!(
                "identity index {} out of range 0..{n_id}",
                self.identity
            )));
        }
        Ok(())
    }

    /// One-hot concatenation `[emotion | intensity | identity]`.
    pub fn encode(&self, n_id: usize) -> Result<Vec<f64>> {
        self.validate(n_id)?;
        let mut c = vec![0.0; condition_width(n_id)];
        c[self.emotion] = 1.0;
        c[N_EMOTIONS + self.intensity] = 1.0;
        c[N_EMOTIONS + N_INTENSITIES + self.identity] = 1.0;
        Ok(c)
    }
}

/// Checks a soft condition row: entries in `[0, 1]`, each block a convex
/// combination. Hard one-hot rows pass trivially.
pub fn validate_condition_row(row: &[f64], n_id: usize) -> Result<()> {
    let cw = condition_width(n_id);
    if row.len() != cw {
        return Err(CoreError::invalid(format!(
            "condition row has {} entries, expected {cw}",
            row.len()
        )));
    }
    for (i, v) in row.iter().enumerate() {
        if !(*v >= 0.0 && *v <= 1.0 + 1e-9) {
            return Err(CoreError::invalid(format!(
                "condition entry {i} is {v}, outside [0, 1]"
            )));
        }
    }
    for (name, lo, hi) in [
        ("emotion", 0, N_EMOTIONS),
        ("intensity", N_EMOTIONS, N_EMOTIONS + N_INTENSITIES),
        ("identity", N_EMOTIONS + N_INTENSITIES, cw),
    ] {
        let sum: f64 = row[lo..hi].iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::invalid(format!(
                "{name} block sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

// ── Timeline ────────────────────────────────────────────────────────────

/// How a keyframe's condition evolves until the next keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    /// Constant until the next keyframe.
    Hold,
    /// Convex blend toward the next keyframe's condition.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub emotion: usize,
    pub intensity: usize,
    pub identity: usize,
    pub interpolation: Interp,
}

impl Keyframe {
    fn condition(&self) -> Condition {
        Condition {
            emotion: self.emotion,
            intensity: self.intensity,
            identity: self.identity,
        }
    }
}

/// A condition timeline: keyframes at strictly increasing frames, starting
/// at frame 0. The last keyframe holds to the end of the clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timeline {
    pub keys: Vec<Keyframe>,
}

impl Timeline {
    /// A single condition over the whole clip.
    pub fn constant(c: Condition) -> Self {
        Timeline {
            keys: vec![Keyframe {
                frame: 0,
                emotion: c.emotion,
                intensity: c.intensity,
                identity: c.identity,
                interpolation: Interp::Hold,
            }],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let keys: Vec<Keyframe> = serde_json::from_str(text)
            .map_err(|e| CoreError::invalid(format!("timeline parse failed: {e}")))?;
        Ok(Timeline { keys })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.keys)?)
    }

    /// Per-frame encoded conditions as a `[frames, condition_width]` matrix.
    pub fn resolve(&self, frames: usize, n_id: usize) -> Result<Tensor> {
        if frames == 0 {
            return Err(CoreError::invalid("cannot resolve a timeline over zero frames"));
        }
        if self.keys.is_empty() {
            return Err(CoreError::invalid("timeline has no keyframes"));
        }
        if self.keys[0].frame != 0 {
            return Err(CoreError::invalid(format!(
                "first keyframe sits at frame {}, expected 0",
                self.keys[0].frame
            )));
        }
        for pair in self.keys.windows(2) {
            if pair[1].frame <= pair[0].frame {
                return Err(CoreError::invalid(format!(
                    "keyframes must be strictly increasing, got {} then {}",
                    pair[0].frame, pair[1].frame
                )));
            }
        }
        let last = self.keys.last().unwrap();
        if last.frame >= frames {
            return Err(CoreError::invalid(format!(
                "keyframe at frame {} is beyond the {frames}-frame clip",
                last.frame
            )));
        }
        let cw = condition_width(n_id);
        let mut rows = Vec::with_capacity(frames * cw);
        for (k, key) in self.keys.iter().enumerate() {
            let from = key.condition().encode(n_id)?;
            let until = self.keys.get(k + 1).map_or(frames, |n| n.frame);
            match (key.interpolation, self.keys.get(k + 1)) {
                (Interp::Linear, Some(next)) => {
                    let to = next.condition().encode(n_id)?;
                    let span = (next.frame - key.frame) as f64;
                    for f in key.frame..until {
                        let alpha = (f - key.frame) as f64 / span;
                        rows.extend(
                            from.iter().zip(&to).map(|(a, b)| (1.0 - alpha) * a + alpha * b),
                        );
                    }
                }
                _ => {
                    for _ in key.frame..until {
                        rows.extend_from_slice(&from);
                    }
                }
            }
        }
        Ok(Tensor::from_vec(&[frames, cw], rows)?)
    }
}

// ── Model ───────────────────────────────────────────────────────────────

/// The regressor: adapter + style + squash heads over a frozen prior
/// decoder. The prior's encoder rides along in checkpoints untouched.
#[derive(Debug, Clone)]
pub struct Animator {
    pub n_identities: usize,
    pub train_seed: u64,
    /// `[SPEECH_DIM, SPEECH_DIM]`; starts as the identity map.
    pub adapter_w: Tensor,
    pub adapter_b: Tensor,
    /// `[condition_width, STYLE_WIDTH]`, no bias: the zero condition maps
    /// to the zero style.
    pub style_w: Tensor,
    /// `[q * (SPEECH_DIM + STYLE_WIDTH), latent]`.
    pub squash_w: Tensor,
    pub squash_b: Tensor,
    pub prior: MotionPrior,
}

/// Animator weights bound into a graph. The decoder is always bound as
/// constants: no gradient can reach it by construction.
pub struct BoundAnimator {
    pub adapter_w: NodeId,
    pub adapter_b: NodeId,
    pub style_w: NodeId,
    pub squash_w: NodeId,
    pub squash_b: NodeId,
    pub decoder: BoundPrior,
    n_identities: usize,
}

impl Animator {
    pub fn seeded(n_identities: usize, prior: MotionPrior, seed: u64) -> Result<Self> {
        if n_identities == 0 {
            return Err(CoreError::invalid("animator needs at least one identity"));
        }
        let cw = condition_width(n_identities);
        let hyper = &prior.hyper;
        let squash_in = hyper.q * (SPEECH_DIM + STYLE_WIDTH);
        let mut rng = seeds::rng(derive_seed(seed, "animator-init", 0));
        let mut adapter = Tensor::zeros(&[SPEECH_DIM, SPEECH_DIM]);
        for i in 0..SPEECH_DIM {
            adapter.data_mut()[i * SPEECH_DIM + i] = 1.0;
        }
        let style_w = Tensor::randn(&[cw, STYLE_WIDTH], (cw as f64).powf(-0.5), &mut rng);
        let squash_w =
            Tensor::randn(&[squash_in, hyper.latent], (squash_in as f64).powf(-0.5), &mut rng);
        Ok(Animator {
            n_identities,
            train_seed: 0,
            adapter_w: adapter,
            adapter_b: Tensor::zeros(&[SPEECH_DIM]),
            style_w,
            squash_w,
            squash_b: Tensor::zeros(&[hyper.latent]),
            prior,
        })
    }

    pub fn condition_width(&self) -> usize {
        condition_width(self.n_identities)
    }

    /// Style projection of encoded condition rows `[n, condition_width]`.
    pub fn style(&self, conditions: &Tensor) -> Result<Tensor> {
        let shape = conditions.shape();
        if shape.len() != 2 || shape[1] != self.condition_width() {
            return Err(CoreError::invalid(format!(
                "conditions must be [n, {}], got {shape:?}",
                self.condition_width()
            )));
        }
        for r in 0..shape[0] {
            validate_condition_row(
                &conditions.data()[r * shape[1]..(r + 1) * shape[1]],
                self.n_identities,
            )?;
        }
        let mut g = Graph::new();
        let c = g.constant(conditions.clone());
        let w = g.constant(self.style_w.clone());
        let s = g.matmul(c, w)?;
        Ok(g.value(s).clone())
    }

    /// Trainable weights for the first training stage, in binding order.
    pub fn stage1_params(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.adapter_w,
            &mut self.adapter_b,
            &mut self.style_w,
            &mut self.squash_w,
            &mut self.squash_b,
        ]
    }

    /// Trainable weights once the adapter is frozen.
    pub fn stage2_params(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.style_w, &mut self.squash_w, &mut self.squash_b]
    }

    /// Binds the regressor; `adapter_trainable` and `heads_trainable` pick
    /// the stage. The decoder always enters as constants.
    pub fn bind(&self, g: &mut Graph, adapter_trainable: bool, heads_trainable: bool) -> BoundAnimator {
        fn put(g: &mut Graph, t: &Tensor, trainable: bool) -> NodeId {
            if trainable {
                g.input(t.clone())
            } else {
                g.constant(t.clone())
            }
        }
        BoundAnimator {
            adapter_w: put(g, &self.adapter_w, adapter_trainable),
            adapter_b: put(g, &self.adapter_b, adapter_trainable),
            style_w: put(g, &self.style_w, heads_trainable),
            squash_w: put(g, &self.squash_w, heads_trainable),
            squash_b: put(g, &self.squash_b, heads_trainable),
            decoder: self.prior.bind(g, false),
            n_identities: self.n_identities,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = AnimatorMeta {
            format_version: CHECKPOINT_VERSION,
            n_identities: self.n_identities,
            train_seed: self.train_seed,
            prior_hyper: self.prior.hyper.clone(),
            prior_train_seed: self.prior.train_seed,
        };
        let b = ArchiveBuilder::new("animator")
            .meta(serde_json::to_value(&meta)?)
            .tensor("adapter_w", &self.adapter_w)
            .tensor("adapter_b", &self.adapter_b)
            .tensor("style_w", &self.style_w)
            .tensor("squash_w", &self.squash_w)
            .tensor("squash_b", &self.squash_b);
        self.prior.archive_tensors(b, "prior.").write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::read(path)?;
        a.expect_kind("animator")?;
        let meta: AnimatorMeta = a.meta_as()?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(CoreError::archive(
                path,
                format!("unsupported checkpoint version {}", meta.format_version),
            ));
        }
        if meta.n_identities == 0 {
            return Err(CoreError::archive(path, "identity count must be positive"));
        }
        let prior = MotionPrior::tensors_from_archive(
            &a,
            "prior.",
            meta.prior_hyper,
            meta.prior_train_seed,
        )?;
        let model = Animator {
            n_identities: meta.n_identities,
            train_seed: meta.train_seed,
            adapter_w: a.tensor("adapter_w")?,
            adapter_b: a.tensor("adapter_b")?,
            style_w: a.tensor("style_w")?,
            squash_w: a.tensor("squash_w")?,
            squash_b: a.tensor("squash_b")?,
            prior,
        };
        let cw = condition_width(model.n_identities);
        let squash_in = model.prior.hyper.q * (SPEECH_DIM + STYLE_WIDTH);
        let check = |name: &str, got: &[usize], want: &[usize]| -> Result<()> {
            if got != want {
                return Err(CoreError::archive(
                    path,
                    format!("{name} has shape {got:?}, expected {want:?}"),
                ));
            }
            Ok(())
        };
        check("adapter_w", model.adapter_w.shape(), &[SPEECH_DIM, SPEECH_DIM])?;
        check("adapter_b", model.adapter_b.shape(), &[SPEECH_DIM])?;
        check("style_w", model.style_w.shape(), &[cw, STYLE_WIDTH])?;
        check("squash_w", model.squash_w.shape(), &[squash_in, model.prior.hyper.latent])?;
        check("squash_b", model.squash_b.shape(), &[model.prior.hyper.latent])?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct AnimatorMeta {
    format_version: u32,
    n_identities: usize,
    train_seed: u64,
    prior_hyper: PriorHyper,
    prior_train_seed: u64,
}

impl BoundAnimator {
    /// Node ids matching [`Animator::stage1_params`].
    pub fn stage1_nodes(&self) -> Vec<NodeId> {
        vec![self.adapter_w, self.adapter_b, self.style_w, self.squash_w, self.squash_b]
    }

    /// Node ids matching [`Animator::stage2_params`].
    pub fn stage2_nodes(&self) -> Vec<NodeId> {
        vec![self.style_w, self.squash_w, self.squash_b]
    }
}

// ── Regression graph ────────────────────────────────────────────────────

/// Latent sequence from speech and per-frame condition nodes, `[T/q,
/// latent]`. T must already be a positive multiple of q; latent frame t
/// depends only on styled frames `[tq, (t+1)q)`.
pub fn regress_nodes(
    g: &mut Graph,
    m: &BoundAnimator,
    speech: NodeId,
    conditions: NodeId,
) -> Result<NodeId> {
    let q = m.decoder.hyper().q;
    let s_shape = g.value(speech).shape().to_vec();
    if s_shape.len() != 2 || s_shape[1] != SPEECH_DIM {
        return Err(CoreError::invalid(format!(
            "speech features must be [T, {SPEECH_DIM}], got {s_shape:?}"
        )));
    }
    let t = s_shape[0];
    let c_shape = g.value(conditions).shape().to_vec();
    if c_shape.len() != 2 || c_shape[1] != condition_width(m.n_identities) {
        return Err(CoreError::invalid(format!(
            "conditions must be [T, {}], got {c_shape:?}",
            condition_width(m.n_identities)
        )));
    }
    if c_shape[0] != t {
        return Err(CoreError::invalid(format!(
            "timeline covers {} frames but speech has {t}",
            c_shape[0]
        )));
    }
    if t < q {
        return Err(CoreError::invalid(format!(
            "{t} frames cannot fill one latent frame of {q} motion frames"
        )));
    }
    if t % q != 0 {
        return Err(CoreError::invalid(format!(
            "graph regressor needs T divisible by {q}, got {t}; pad upstream"
        )));
    }
    let adapted = linear(g, speech, m.adapter_w, Some(m.adapter_b))?;
    let styles = g.matmul(conditions, m.style_w)?;
    let styled = g.concat_cols(&[adapted, styles])?;
    let blocks = g.reshape(styled, &[t / q, q * (SPEECH_DIM + STYLE_WIDTH)])?;
    Ok(linear(g, blocks, m.squash_w, Some(m.squash_b))?)
}

/// Pads `[T, d]` rows to a multiple of q by repeating the final row.
fn pad_rows(x: &Tensor, q: usize) -> Result<Tensor> {
    let (t, d) = (x.shape()[0], x.shape()[1]);
    if t % q == 0 {
        return Ok(x.clone());
    }
    let padded = t + q - t % q;
    let mut data = x.data().to_vec();
    let last = x.data()[(t - 1) * d..].to_vec();
    for _ in t..padded {
        data.extend_from_slice(&last);
    }
    Ok(Tensor::from_vec(&[padded, d], data)?)
}

pub struct AnimationOutput {
    /// `[T, MOTION_DIM]`, trimmed back to the requested length.
    pub motion: Tensor,
    /// `[ceil(T/q), latent]` latent sequence fed to the decoder.
    pub latents: Tensor,
}

/// Runs the full regressor on plain tensors: one decoder call, any length.
/// Speech shorter than q frames is an error; other lengths are right-padded
/// with the final frame and the motion is trimmed back to T.
pub fn animate(model: &Animator, speech: &Tensor, timeline: &Timeline) -> Result<AnimationOutput> {
    let shape = speech.shape();
    if shape.len() != 2 || shape[1] != SPEECH_DIM {
        return Err(CoreError::invalid(format!(
            "speech features must be [T, {SPEECH_DIM}], got {shape:?}"
        )));
    }
    let t = shape[0];
    let conditions = timeline.resolve(t, model.n_identities)?;
    animate_rows(model, speech, &conditions)
}

/// As [`animate`], with pre-resolved per-frame condition rows. The rows are
/// validated, so hand-built soft conditions go through the same checks as
/// timeline output.
pub fn animate_rows(
    model: &Animator,
    speech: &Tensor,
    conditions: &Tensor,
) -> Result<AnimationOutput> {
    let q = model.prior.hyper.q;
    let shape = speech.shape();
    if shape.len() != 2 || shape[1] != SPEECH_DIM {
        return Err(CoreError::invalid(format!(
            "speech features must be [T, {SPEECH_DIM}], got {shape:?}"
        )));
    }
    let t = shape[0];
    if t < q {
        return Err(CoreError::invalid(format!(
            "{t} frames cannot fill one latent frame of {q} motion frames"
        )));
    }
    let c_shape = conditions.shape();
    if c_shape.len() != 2 || c_shape[1] != model.condition_width() {
        return Err(CoreError::invalid(format!(
            "conditions must be [T, {}], got {c_shape:?}",
            model.condition_width()
        )));
    }
    if c_shape[0] != t {
        return Err(CoreError::invalid(format!(
            "timeline covers {} frames but speech has {t}",
            c_shape[0]
        )));
    }
    for r in 0..t {
        validate_condition_row(
            &conditions.data()[r * c_shape[1]..(r + 1) * c_shape[1]],
            model.n_identities,
        )?;
    }
    let speech_p = pad_rows(speech, q)?;
    let conds_p = pad_rows(conditions, q)?;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false, false);
    let s = g.constant(speech_p);
    let c = g.constant(conds_p);
    let z = regress_nodes(&mut g, &bound, s, c)?;
    let out = decoder_nodes(&mut g, &bound.decoder, z)?;
    let latents = g.value(z).clone();
    let full = g.value(out);
    let motion = Tensor::from_vec(&[t, MOTION_DIM], full.data()[..t * MOTION_DIM].to_vec())?;
    Ok(AnimationOutput { motion, latents })
}

/// Single-condition convenience; bitwise identical to a one-key hold
/// timeline.
pub fn animate_with(model: &Animator, speech: &Tensor, c: &Condition) -> Result<AnimationOutput> {
    animate(model, speech, &Timeline::constant(*c))
}

// ── Export ──────────────────────────────────────────────────────────────

/// Writes one line per frame: the motion parameters as comma-separated
/// decimal values, full round-trip precision, no header.
pub fn write_motion_csv(w: &mut impl Write, motion: &Tensor) -> Result<()> {
    let shape = motion.shape();
    if shape.len() != 2 || shape[1] != MOTION_DIM {
        return Err(CoreError::invalid(format!(
            "motion must be [T, {MOTION_DIM}], got {shape:?}"
        )));
    }
    for f in 0..shape[0] {
        let row = &motion.data()[f * MOTION_DIM..(f + 1) * MOTION_DIM];
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Synthesizes every frame and writes `frame_00000.obj` onward into `dir`.
/// Returns the number of files written.
pub fn export_motion_objs(
    dir: &Path,
    assets: &FaceAssets,
    beta: &[f64],
    motion: &Tensor,
) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let meshes = assets.synthesize_sequence(beta, motion)?;
    for (f, mesh) in meshes.iter().enumerate() {
        let path = dir.join(format!("frame_{f:05}.obj"));
        crate::face::export_obj(&path, mesh, &assets.triangles)?;
    }
    Ok(meshes.len())
}
