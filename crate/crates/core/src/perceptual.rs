//! Geometry-driven perceptual features and the sequence emotion classifier.
//!
//! Two fixed feature extractors read synthesized meshes: lip features see
//! only mouth vertices (centered coordinates plus frame-to-frame deltas,
//! through a seeded orthonormal projection, unit-normalized per frame), and
//! frame emotion features see the whole expression region through a seeded
//! gaussian projection. A single-layer transformer with two linear heads
//! turns frame features into sequence-level emotion and intensity logits
//! plus a mean-pooled sequence embedding; negative-cosine distances over
//! these features serve as alignment losses elsewhere.
//!
//! Every extractor exists in two forms that agree to float precision: a
//! plain one for data preparation and evaluation, and a graph one used
//! inside training objectives.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use ndgrad::nn::{alibi_bias, encoder_layer, linear, EncoderLayerNodes};
use ndgrad::{Adam, AdamConfig, Graph, NodeId, Tensor};

use crate::archive::{Archive, ArchiveBuilder};
use crate::blocks::{EncoderParams, LN_EPS};
use crate::error::{CoreError, Result};
use crate::face::FaceAssets;
use crate::seeds::{self, derive_seed};
use crate::synthdata::{Dataset, EMOTION_NAMES, N_EMOTIONS, N_INTENSITIES};

/// Width of one per-frame lip feature row.
pub const LIP_WIDTH: usize = 32;
/// Width of one per-frame emotion feature row.
pub const EMOTION_WIDTH: usize = 64;
/// Width of the pooled sequence feature.
pub const SEQ_FEATURE_WIDTH: usize = 256;
/// Attention heads in the sequence classifier.
pub const CLASSIFIER_HEADS: usize = 4;
/// Feed-forward width of the classifier's encoder layer.
pub const CLASSIFIER_FF: usize = 512;
/// Temporal difference lags the classifier prepends to each frame feature.
/// Lag 1 reads instantaneous motion; lag 4 spans the articulation smoothing
/// window, so slow expression drift stands out against it.
const DELTA_LAGS: [usize; 2] = [1, 4];
/// Classifier embedding input width: the frame feature plus one delta
/// channel per lag.
const EMBED_IN: usize = (1 + DELTA_LAGS.len()) * EMOTION_WIDTH;

/// Stabilizer added to squared norms inside graphs, where a zero-norm error
/// branch is not expressible. Plain and graph features agree to ~1e-9 on
/// non-degenerate meshes.
const NORM_EPS: f64 = 1e-12;

/// Gain on the emotion projection. Centered face coordinates live around
/// 0.1, so the raw random projection would emit features near 0.1 as well;
/// this fixed factor moves per-coordinate variance near one, which keeps
/// downstream attention scores and feed-forward units in their responsive
/// range. Cosine distances are scale-invariant, so the gain only affects
/// classifier conditioning.
const EMOTION_GAIN: f64 = 8.0;

const CHECKPOINT_VERSION: u32 = 1;
const STATIC_HEAD_HIDDEN: usize = 32;
const STATIC_HEAD_STEPS: usize = 300;
const STATIC_HEAD_LR: f64 = 3e-3;

// ── Fixed projections ───────────────────────────────────────────────────

/// Seeded projection maps shared by both extractors. The seeds fully
/// determine the maps, so a checkpoint only has to record seeds and input
/// widths to reproduce features bitwise.
#[derive(Debug, Clone)]
pub struct Projections {
    pub lip_seed: u64,
    pub emo_seed: u64,
    /// `[6 * n_mouth, LIP_WIDTH]`, orthonormal columns.
    pub lip_map: Tensor,
    /// `[3 * n_region, EMOTION_WIDTH]`, gaussian entries at JL scale.
    pub emo_map: Tensor,
    /// Graph-level extractor invocations; instrumentation shared across
    /// clones and graph bindings, never serialized.
    calls: Arc<AtomicU64>,
}

impl Projections {
    pub fn seeded(lip_in: usize, emo_in: usize, lip_seed: u64, emo_seed: u64) -> Result<Self> {
        if lip_in < LIP_WIDTH {
            return Err(CoreError::invalid(format!(
                "lip projection needs at least {LIP_WIDTH} input coordinates, got {lip_in}"
            )));
        }
        if emo_in == 0 {
            return Err(CoreError::invalid("emotion projection needs a nonempty region"));
        }
        let mut rng = seeds::rng(lip_seed);
        let draws = Tensor::randn(&[LIP_WIDTH, lip_in], 1.0, &mut rng);
        let mut rows: Vec<Vec<f64>> = (0..LIP_WIDTH)
            .map(|r| draws.data()[r * lip_in..(r + 1) * lip_in].to_vec())
            .collect();
        crate::face::gen::orthonormalize(&mut rows);
        let mut lip = vec![0.0; lip_in * LIP_WIDTH];
        for (r, row) in rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                lip[i * LIP_WIDTH + r] = *v;
            }
        }
        let mut rng = seeds::rng(emo_seed);
        let emo = Tensor::randn(
            &[emo_in, EMOTION_WIDTH],
            EMOTION_GAIN * (emo_in as f64).powf(-0.5),
            &mut rng,
        );
        Ok(Projections {
            lip_seed,
            emo_seed,
            lip_map: Tensor::from_vec(&[lip_in, LIP_WIDTH], lip)?,
            emo_map: emo,
            calls: Arc::new(AtomicU64::new(0)),
        })
    }

    /// Maps sized for the given face, with both seeds derived from `seed`.
    pub fn for_assets(assets: &FaceAssets, seed: u64) -> Result<Self> {
        Self::seeded(
            6 * assets.mouth.len(),
            3 * assets.expression_region.len(),
            derive_seed(seed, "lip-map", 0),
            derive_seed(seed, "emotion-map", 0),
        )
    }

    /// How many times the graph-level extractors ran against these maps.
    /// Lets training stages prove they never touched the feature path.
    pub fn graph_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn lip_input_width(&self) -> usize {
        self.lip_map.shape()[0]
    }

    pub fn emotion_input_width(&self) -> usize {
        self.emo_map.shape()[0]
    }

    fn check_lip(&self, assets: &FaceAssets) -> Result<()> {
        if self.lip_input_width() != 6 * assets.mouth.len() {
            return Err(CoreError::invalid(format!(
                "lip projection expects {} input coordinates but the face provides {}",
                self.lip_input_width(),
                6 * assets.mouth.len()
            )));
        }
        Ok(())
    }

    fn check_emotion(&self, assets: &FaceAssets) -> Result<()> {
        if self.emotion_input_width() != 3 * assets.expression_region.len() {
            return Err(CoreError::invalid(format!(
                "emotion projection expects {} input coordinates but the face provides {}",
                self.emotion_input_width(),
                3 * assets.expression_region.len()
            )));
        }
        Ok(())
    }
}

// ── Plain extractors ────────────────────────────────────────────────────

fn check_mesh(assets: &FaceAssets, mesh: &Tensor) -> Result<()> {
    let n = assets.n_vertices();
    if mesh.shape() != [n, 3] {
        return Err(CoreError::invalid(format!(
            "mesh must be [{n}, 3], got {:?}",
            mesh.shape()
        )));
    }
    Ok(())
}

/// Coordinates of `idx` vertices, centered on their centroid, flattened.
fn centered_coords(mesh: &Tensor, idx: &[usize]) -> Vec<f64> {
    let d = mesh.data();
    let mut c = [0.0; 3];
    for &v in idx {
        for a in 0..3 {
            c[a] += d[3 * v + a];
        }
    }
    for v in &mut c {
        *v /= idx.len() as f64;
    }
    let mut out = Vec::with_capacity(3 * idx.len());
    for &v in idx {
        for a in 0..3 {
            out.push(d[3 * v + a] - c[a]);
        }
    }
    out
}

/// `row [din] x map [din, dout]`, accumulated in input order so the plain
/// and graph paths agree bitwise before normalization.
fn project(row: &[f64], map: &Tensor) -> Vec<f64> {
    let dout = map.shape()[1];
    let m = map.data();
    let mut out = vec![0.0; dout];
    for (i, x) in row.iter().enumerate() {
        let mrow = &m[i * dout..(i + 1) * dout];
        for (o, w) in out.iter_mut().zip(mrow) {
            *o += x * w;
        }
    }
    out
}

/// Per-frame lip features `[T, LIP_WIDTH]` from a synthesized vertex track.
/// Each frame sees only mouth vertices: their centered coordinates plus the
/// delta of those coordinates against the previous frame (zero at the first
/// frame), projected and unit-normalized.
pub fn extract_lip_features(
    assets: &FaceAssets,
    proj: &Projections,
    track: &[Tensor],
) -> Result<Tensor> {
    proj.check_lip(assets)?;
    if track.is_empty() {
        return Err(CoreError::invalid("empty vertex track has no lip features"));
    }
    let half = 3 * assets.mouth.len();
    let mut out = Vec::with_capacity(track.len() * LIP_WIDTH);
    let mut prev: Option<Vec<f64>> = None;
    for (t, mesh) in track.iter().enumerate() {
        check_mesh(assets, mesh)?;
        let centered = centered_coords(mesh, &assets.mouth);
        let mut pre = Vec::with_capacity(2 * half);
        pre.extend_from_slice(&centered);
        match &prev {
            Some(p) => pre.extend(centered.iter().zip(p).map(|(c, p)| c - p)),
            None => pre.extend(std::iter::repeat(0.0).take(half)),
        }
        let projected = project(&pre, &proj.lip_map);
        let norm = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(CoreError::invalid(format!(
                "zero-norm lip feature at frame {t}: degenerate mouth geometry"
            )));
        }
        out.extend(projected.iter().map(|v| v / norm));
        prev = Some(centered);
    }
    Ok(Tensor::from_vec(&[track.len(), LIP_WIDTH], out)?)
}

/// One frame's emotion feature `[EMOTION_WIDTH]`: centered expression-region
/// coordinates through the fixed projection. Unnormalized.
pub fn extract_frame_emotion(
    assets: &FaceAssets,
    proj: &Projections,
    mesh: &Tensor,
) -> Result<Tensor> {
    proj.check_emotion(assets)?;
    check_mesh(assets, mesh)?;
    let pre = centered_coords(mesh, &assets.expression_region);
    Ok(Tensor::from_vec(&[EMOTION_WIDTH], project(&pre, &proj.emo_map))?)
}

/// Emotion features for every frame of a track, stacked `[T, EMOTION_WIDTH]`.
pub fn frame_emotion_track(
    assets: &FaceAssets,
    proj: &Projections,
    track: &[Tensor],
) -> Result<Tensor> {
    if track.is_empty() {
        return Err(CoreError::invalid("empty vertex track has no emotion features"));
    }
    let mut out = Vec::with_capacity(track.len() * EMOTION_WIDTH);
    for mesh in track {
        out.extend_from_slice(extract_frame_emotion(assets, proj, mesh)?.data());
    }
    Ok(Tensor::from_vec(&[track.len(), EMOTION_WIDTH], out)?)
}

// ── Graph extractors ────────────────────────────────────────────────────

/// Projection maps bound as graph constants.
pub struct ProjectionNodes {
    pub lip: NodeId,
    pub emo: NodeId,
    calls: Arc<AtomicU64>,
}

pub fn bind_projections(g: &mut Graph, proj: &Projections) -> ProjectionNodes {
    ProjectionNodes {
        lip: g.constant(proj.lip_map.clone()),
        emo: g.constant(proj.emo_map.clone()),
        calls: Arc::clone(&proj.calls),
    }
}

/// Centered region coordinates of a `[n, 3]` mesh node as a `[1, 3k]` row.
fn centered_row_node(g: &mut Graph, idx: &[usize], mesh: NodeId) -> Result<NodeId> {
    let sel = g.gather_rows(mesh, idx)?;
    let cen = g.mean_axis0(sel)?;
    let centered = g.sub_row(sel, cen)?;
    Ok(g.reshape(centered, &[1, 3 * idx.len()])?)
}

/// Graph twin of [`extract_lip_features`]: one `[1, LIP_WIDTH]` unit row per
/// mesh node.
pub fn lip_feature_nodes(
    g: &mut Graph,
    assets: &FaceAssets,
    pn: &ProjectionNodes,
    meshes: &[NodeId],
) -> Result<Vec<NodeId>> {
    if meshes.is_empty() {
        return Err(CoreError::invalid("empty vertex track has no lip features"));
    }
    if g.value(pn.lip).shape()[0] != 6 * assets.mouth.len() {
        return Err(CoreError::invalid(format!(
            "lip projection expects {} input coordinates but the face provides {}",
            g.value(pn.lip).shape()[0],
            6 * assets.mouth.len()
        )));
    }
    pn.calls.fetch_add(1, Ordering::Relaxed);
    let half = 3 * assets.mouth.len();
    let mut rows = Vec::with_capacity(meshes.len());
    let mut prev: Option<NodeId> = None;
    for &mesh in meshes {
        let flat = centered_row_node(g, &assets.mouth, mesh)?;
        let delta = match prev {
            Some(p) => g.sub(flat, p)?,
            None => g.constant(Tensor::zeros(&[1, half])),
        };
        let pre = g.concat_cols(&[flat, delta])?;
        let projected = g.matmul(pre, pn.lip)?;
        let sq = g.mul(projected, projected)?;
        let sumsq = g.sum_all(sq)?;
        let guarded = g.add_const(sumsq, NORM_EPS)?;
        let norm = g.sqrt(guarded)?;
        let inv = g.recip(norm)?;
        rows.push(g.mul_scalar_node(projected, inv)?);
        prev = Some(flat);
    }
    Ok(rows)
}

/// Graph twin of [`extract_frame_emotion`]: a `[1, EMOTION_WIDTH]` row.
pub fn frame_emotion_node(
    g: &mut Graph,
    assets: &FaceAssets,
    pn: &ProjectionNodes,
    mesh: NodeId,
) -> Result<NodeId> {
    if g.value(pn.emo).shape()[0] != 3 * assets.expression_region.len() {
        return Err(CoreError::invalid(format!(
            "emotion projection expects {} input coordinates but the face provides {}",
            g.value(pn.emo).shape()[0],
            3 * assets.expression_region.len()
        )));
    }
    pn.calls.fetch_add(1, Ordering::Relaxed);
    let flat = centered_row_node(g, &assets.expression_region, mesh)?;
    Ok(g.matmul(flat, pn.emo)?)
}

// ── Distances ───────────────────────────────────────────────────────────

fn cosine_to_distance(dot: f64, na: f64, nb: f64) -> f64 {
    (-(dot / (na * nb))).clamp(-1.0, 1.0)
}

/// Negative cosine similarity between two feature vectors, in `[-1, 1]`.
/// Bitwise-equal inputs return exactly `-1`.
pub fn emotion_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CoreError::invalid(format!(
            "feature shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let na = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::invalid("zero-norm feature has no direction"));
    }
    if a.data() == b.data() {
        return Ok(-1.0);
    }
    let dot = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    Ok(cosine_to_distance(dot, na, nb))
}

/// Mean over frames of the negative cosine between matching `[T, w]` rows.
pub fn lip_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CoreError::invalid(format!(
            "lip track shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.shape().len() != 2 || a.shape()[0] == 0 {
        return Err(CoreError::invalid(format!(
            "lip tracks must be [T, w] with T >= 1, got {:?}",
            a.shape()
        )));
    }
    let (t, w) = (a.shape()[0], a.shape()[1]);
    let mut total = 0.0;
    for f in 0..t {
        let ra = &a.data()[f * w..(f + 1) * w];
        let rb = &b.data()[f * w..(f + 1) * w];
        let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(CoreError::invalid(format!(
                "zero-norm lip feature at frame {f} has no direction"
            )));
        }
        if ra == rb {
            total += -1.0;
            continue;
        }
        let dot = ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>();
        total += cosine_to_distance(dot, na, nb);
    }
    Ok(total / t as f64)
}

/// Graph negative cosine between two equal-shape feature nodes, with
/// eps-guarded norms.
pub fn emotion_distance_node(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(CoreError::invalid(format!(
            "feature shapes differ: {:?} vs {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    let prod = g.mul(a, b)?;
    let dot = g.sum_all(prod)?;
    let aa = g.mul(a, a)?;
    let na = g.sum_all(aa)?;
    let na = g.add_const(na, NORM_EPS)?;
    let bb = g.mul(b, b)?;
    let nb = g.sum_all(bb)?;
    let nb = g.add_const(nb, NORM_EPS)?;
    let nn = g.mul(na, nb)?;
    let root = g.sqrt(nn)?;
    let inv = g.recip(root)?;
    let cos = g.mul(dot, inv)?;
    Ok(g.neg(cos)?)
}

/// Graph lip distance over per-frame rows that are already unit-normalized
/// (the extractor's output), so each frame's cosine is a plain dot product.
pub fn lip_distance_node(g: &mut Graph, a: &[NodeId], b: &[NodeId]) -> Result<NodeId> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::invalid(format!(
            "lip tracks must pair up frame by frame: {} vs {} frames",
            a.len(),
            b.len()
        )));
    }
    let mut total: Option<NodeId> = None;
    for (&ra, &rb) in a.iter().zip(b) {
        if g.value(ra).shape() != g.value(rb).shape() {
            return Err(CoreError::invalid(format!(
                "lip feature shapes differ: {:?} vs {:?}",
                g.value(ra).shape(),
                g.value(rb).shape()
            )));
        }
        let prod = g.mul(ra, rb)?;
        let dot = g.sum_all(prod)?;
        total = Some(match total {
            Some(acc) => g.add(acc, dot)?,
            None => dot,
        });
    }
    Ok(g.scale(total.expect("nonempty"), -1.0 / a.len() as f64)?)
}

// ── Sequence emotion classifier ─────────────────────────────────────────

/// Classifier output for one sequence.
#[derive(Debug, Clone)]
pub struct VideoEmotionOutput {
    /// `[N_EMOTIONS]` logits.
    pub emotion_logits: Tensor,
    /// `[N_INTENSITIES]` logits.
    pub intensity_logits: Tensor,
    /// `[SEQ_FEATURE_WIDTH]` mean-pooled sequence feature.
    pub pooled: Tensor,
}

/// Single-layer transformer classifier over frame emotion features, plus the
/// projections its features were extracted with.
#[derive(Debug, Clone)]
pub struct VideoEmotionModel {
    pub projections: Projections,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub layer: EncoderParams,
    pub emotion_w: Tensor,
    pub emotion_b: Tensor,
    pub intensity_w: Tensor,
    pub intensity_b: Tensor,
}

/// Model weights bound into a graph.
pub struct BoundVideoEmotion {
    pub embed_w: NodeId,
    pub embed_b: NodeId,
    pub layer: EncoderLayerNodes,
    pub emotion_w: NodeId,
    pub emotion_b: NodeId,
    pub intensity_w: NodeId,
    pub intensity_b: NodeId,
}

impl BoundVideoEmotion {
    /// Node ids in the same order as [`VideoEmotionModel::param_list`].
    pub fn node_list(&self) -> Vec<NodeId> {
        let mut v = vec![self.embed_w, self.embed_b];
        v.extend(EncoderParams::nodes_of(&self.layer));
        v.extend([self.emotion_w, self.emotion_b, self.intensity_w, self.intensity_b]);
        v
    }
}

/// Classifier outputs as graph nodes.
pub struct VideoEmotionNodes {
    /// `[1, N_EMOTIONS]`.
    pub emotion_logits: NodeId,
    /// `[1, N_INTENSITIES]`.
    pub intensity_logits: NodeId,
    /// `[1, SEQ_FEATURE_WIDTH]`.
    pub pooled: NodeId,
}

impl VideoEmotionModel {
    pub fn seeded(projections: Projections, seed: u64) -> Self {
        let mut rng = seeds::rng(derive_seed(seed, "classifier-init", 0));
        let we = (EMBED_IN as f64).powf(-0.5);
        let wp = (SEQ_FEATURE_WIDTH as f64).powf(-0.5);
        VideoEmotionModel {
            projections,
            embed_w: Tensor::randn(&[EMBED_IN, SEQ_FEATURE_WIDTH], we, &mut rng),
            embed_b: Tensor::zeros(&[SEQ_FEATURE_WIDTH]),
            layer: EncoderParams::seeded(SEQ_FEATURE_WIDTH, CLASSIFIER_FF, &mut rng),
            emotion_w: Tensor::randn(&[SEQ_FEATURE_WIDTH, N_EMOTIONS], wp, &mut rng),
            emotion_b: Tensor::zeros(&[N_EMOTIONS]),
            intensity_w: Tensor::randn(&[SEQ_FEATURE_WIDTH, N_INTENSITIES], wp, &mut rng),
            intensity_b: Tensor::zeros(&[N_INTENSITIES]),
        }
    }

    /// Mutable weights in the fixed optimizer order.
    pub fn param_list(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![&mut self.embed_w, &mut self.embed_b];
        v.extend(self.layer.tensors_mut());
        v.push(&mut self.emotion_w);
        v.push(&mut self.emotion_b);
        v.push(&mut self.intensity_w);
        v.push(&mut self.intensity_b);
        v
    }

    /// Binds weights as inputs when `trainable`, constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundVideoEmotion {
        fn put(g: &mut Graph, t: &Tensor, trainable: bool) -> NodeId {
            if trainable {
                g.input(t.clone())
            } else {
                g.constant(t.clone())
            }
        }
        BoundVideoEmotion {
            embed_w: put(g, &self.embed_w, trainable),
            embed_b: put(g, &self.embed_b, trainable),
            layer: self.layer.bind(g, trainable),
            emotion_w: put(g, &self.emotion_w, trainable),
            emotion_b: put(g, &self.emotion_b, trainable),
            intensity_w: put(g, &self.intensity_w, trainable),
            intensity_b: put(g, &self.intensity_b, trainable),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ClassifierMeta {
            format_version: CHECKPOINT_VERSION,
            lip_seed: self.projections.lip_seed,
            emo_seed: self.projections.emo_seed,
            lip_input_width: self.projections.lip_input_width(),
            emotion_input_width: self.projections.emotion_input_width(),
            n_heads: CLASSIFIER_HEADS,
            ff_width: self.layer.ff_width(),
        };
        let b = ArchiveBuilder::new("video-emotion")
            .meta(serde_json::to_value(&meta)?)
            .tensor("embed_w", &self.embed_w)
            .tensor("embed_b", &self.embed_b);
        let b = self.layer.archive_into(b, "layer");
        b.tensor("emotion_w", &self.emotion_w)
            .tensor("emotion_b", &self.emotion_b)
            .tensor("intensity_w", &self.intensity_w)
            .tensor("intensity_b", &self.intensity_b)
            .write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::read(path)?;
        a.expect_kind("video-emotion")?;
        let meta: ClassifierMeta = a.meta_as()?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(CoreError::archive(
                path,
                format!("unsupported checkpoint version {}", meta.format_version),
            ));
        }
        if meta.n_heads != CLASSIFIER_HEADS {
            return Err(CoreError::archive(
                path,
                format!("checkpoint wants {} heads, this build uses {CLASSIFIER_HEADS}", meta.n_heads),
            ));
        }
        let projections = Projections::seeded(
            meta.lip_input_width,
            meta.emotion_input_width,
            meta.lip_seed,
            meta.emo_seed,
        )?;
        let layer = EncoderParams::from_archive(&a, "layer")?;
        if layer.width() != SEQ_FEATURE_WIDTH || layer.ff_width() != meta.ff_width {
            return Err(CoreError::archive(
                path,
                format!(
                    "encoder widths {}x{} disagree with {SEQ_FEATURE_WIDTH}x{}",
                    layer.width(),
                    layer.ff_width(),
                    meta.ff_width
                ),
            ));
        }
        let model = VideoEmotionModel {
            projections,
            embed_w: a.tensor("embed_w")?,
            embed_b: a.tensor("embed_b")?,
            layer,
            emotion_w: a.tensor("emotion_w")?,
            emotion_b: a.tensor("emotion_b")?,
            intensity_w: a.tensor("intensity_w")?,
            intensity_b: a.tensor("intensity_b")?,
        };
        let expect: [(&str, &[usize]); 6] = [
            ("embed_w", &[EMBED_IN, SEQ_FEATURE_WIDTH]),
            ("embed_b", &[SEQ_FEATURE_WIDTH]),
            ("emotion_w", &[SEQ_FEATURE_WIDTH, N_EMOTIONS]),
            ("emotion_b", &[N_EMOTIONS]),
            ("intensity_w", &[SEQ_FEATURE_WIDTH, N_INTENSITIES]),
            ("intensity_b", &[N_INTENSITIES]),
        ];
        let got: [&Tensor; 6] = [
            &model.embed_w,
            &model.embed_b,
            &model.emotion_w,
            &model.emotion_b,
            &model.intensity_w,
            &model.intensity_b,
        ];
        for ((name, shape), t) in expect.iter().zip(got) {
            if t.shape() != *shape {
                return Err(CoreError::archive(
                    path,
                    format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    format_version: u32,
    lip_seed: u64,
    emo_seed: u64,
    lip_input_width: usize,
    emotion_input_width: usize,
    n_heads: usize,
    ff_width: usize,
}

/// Forward pass over a `[T, EMOTION_WIDTH]` node: subtract the sequence
/// mean, append frame-to-frame deltas, embed, one encoder layer with
/// distance-decay attention biases, mean-pool, two linear heads.
///
/// Both front-end steps are temporal. The mean subtraction removes the
/// static identity and content bias every frame of one sequence shares; the
/// deltas expose motion speed, which separates classes whose frame
/// distributions coincide. Neither is available to a model that sees frames
/// one at a time, and that asymmetry is exactly the dynamic-vs-static
/// contrast this model demonstrates.
pub fn video_emotion_node(
    g: &mut Graph,
    m: &BoundVideoEmotion,
    frames: NodeId,
) -> Result<VideoEmotionNodes> {
    let shape = g.value(frames).shape().to_vec();
    if shape.len() != 2 || shape[1] != EMOTION_WIDTH || shape[0] == 0 {
        return Err(CoreError::invalid(format!(
            "frame features must be [T, {EMOTION_WIDTH}] with T >= 1, got {shape:?}"
        )));
    }
    let t = shape[0];
    let seq_mean = g.mean_axis0(frames)?;
    let centered = g.sub_row(frames, seq_mean)?;
    // Lagged gathers clamp at row 0, so leading deltas taper to zero.
    let mut channels = vec![centered];
    for lag in DELTA_LAGS {
        let idx: Vec<usize> = (0..t).map(|i| i.saturating_sub(lag)).collect();
        let prev = g.gather_rows(centered, &idx)?;
        channels.push(g.sub(centered, prev)?);
    }
    let x = g.concat_cols(&channels)?;
    let h0 = linear(g, x, m.embed_w, Some(m.embed_b))?;
    let biases: Vec<NodeId> = alibi_bias(CLASSIFIER_HEADS, t)
        .into_iter()
        .map(|b| g.constant(b))
        .collect();
    let h1 = encoder_layer(g, h0, &m.layer, &biases, CLASSIFIER_HEADS, LN_EPS)?;
    let mean = g.mean_axis0(h1)?;
    let pooled = g.reshape(mean, &[1, SEQ_FEATURE_WIDTH])?;
    let emotion_logits = linear(g, pooled, m.emotion_w, Some(m.emotion_b))?;
    let intensity_logits = linear(g, pooled, m.intensity_w, Some(m.intensity_b))?;
    Ok(VideoEmotionNodes {
        emotion_logits,
        intensity_logits,
        pooled,
    })
}

/// Plain classification of one `[T, EMOTION_WIDTH]` feature track.
pub fn video_emotion(model: &VideoEmotionModel, frames: &Tensor) -> Result<VideoEmotionOutput> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let f = g.constant(frames.clone());
    let nodes = video_emotion_node(&mut g, &bound, f)?;
    let flat = |id: NodeId, w: usize| {
        Tensor::from_vec(&[w], g.value(id).data().to_vec()).map_err(CoreError::from)
    };
    Ok(VideoEmotionOutput {
        emotion_logits: flat(nodes.emotion_logits, N_EMOTIONS)?,
        intensity_logits: flat(nodes.intensity_logits, N_INTENSITIES)?,
        pooled: flat(nodes.pooled, SEQ_FEATURE_WIDTH)?,
    })
}

// ── Training ────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub epochs: usize,
    /// Frames per training crop; 0 trains on full sequences.
    pub crop: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 50,
            crop: 32,
            lr: 2e-3,
            seed: 41,
        }
    }
}

/// Training record and held-out evaluation of one classifier run.
#[derive(Debug, Clone)]
pub struct ClassifierReport {
    /// Mean per-sample loss for each epoch.
    pub epoch_losses: Vec<f64>,
    /// Held-out emotion confusion counts, `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Held-out accuracy of the sequence model.
    pub dynamic_accuracy: f64,
    /// Held-out accuracy of a per-frame linear classifier with majority
    /// voting; the temporal baseline the sequence model must beat.
    pub static_accuracy: f64,
    /// Held-out accuracy of the intensity head.
    pub intensity_accuracy: f64,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Trains the sequence classifier on the training split and evaluates both
/// it and the per-frame baseline on the held-out split. Deterministic for a
/// fixed config.
pub fn train_video_emotion(
    assets: &FaceAssets,
    data: &Dataset,
    projections: &Projections,
    cfg: &ClassifierConfig,
) -> Result<(VideoEmotionModel, ClassifierReport)> {
    projections.check_emotion(assets)?;
    if cfg.epochs == 0 {
        return Err(CoreError::invalid("classifier training needs at least one epoch"));
    }
    if !(cfg.lr > 0.0) {
        return Err(CoreError::invalid(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if data.train.is_empty() {
        return Err(CoreError::invalid("no training samples"));
    }
    if data.val.is_empty() {
        return Err(CoreError::invalid("no held-out samples to evaluate"));
    }
    let classes: BTreeSet<usize> = data.train.iter().map(|&i| data.records[i].emotion).collect();
    if classes.len() < 2 {
        let only = *classes.iter().next().expect("nonempty");
        return Err(CoreError::invalid(format!(
            "training split holds a single emotion class ({}); the classifier needs contrast",
            EMOTION_NAMES[only]
        )));
    }

    let mut tracks: Vec<Option<Tensor>> = vec![None; data.records.len()];
    for &i in data.train.iter().chain(&data.val) {
        let rec = &data.records[i];
        let meshes = assets.synthesize_sequence(&rec.beta, &rec.motion)?;
        tracks[i] = Some(frame_emotion_track(assets, projections, &meshes)?);
    }
    let track = |i: usize| tracks[i].as_ref().expect("track precomputed");

    let mut model = VideoEmotionModel::seeded(projections.clone(), cfg.seed);
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Linear decay to a tenth of the base rate; single-sample steps stay
        // noisy, so the late epochs need the smaller steps to settle.
        let frac = epoch as f64 / cfg.epochs.max(2).saturating_sub(1) as f64;
        opt.cfg.lr = cfg.lr * (1.0 - 0.9 * frac);
        let mut rng = seeds::rng_for(cfg.seed, "classifier-epoch", epoch as u64);
        let mut order = data.train.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let rec = &data.records[i];
            let full = track(i);
            let frames = full.shape()[0];
            let span = if cfg.crop == 0 { frames } else { cfg.crop.min(frames) };
            let start = rng.gen_range(0..=frames - span);
            let crop = Tensor::from_vec(
                &[span, EMOTION_WIDTH],
                full.data()[start * EMOTION_WIDTH..(start + span) * EMOTION_WIDTH].to_vec(),
            )?;

            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let ids = bound.node_list();
            let f = g.constant(crop);
            let out = video_emotion_node(&mut g, &bound, f)?;
            let ce_emotion = g.cross_entropy_logits(out.emotion_logits, &[rec.emotion])?;
            let ce_intensity = g.cross_entropy_logits(out.intensity_logits, &[rec.intensity])?;
            let loss = g.add(ce_emotion, ce_intensity)?;
            total += g.value(loss).item();
            let grads = g.backward(loss)?;
            let owned: Vec<Tensor> = ids.iter().map(|id| grads.get_or_zeros(*id, &g)).collect();
            let grad_refs: Vec<&Tensor> = owned.iter().collect();
            let mut params = model.param_list();
            opt.step(&mut params, &grad_refs)?;
        }
        epoch_losses.push(total / order.len() as f64);
    }

    let static_head = train_static_head(data, &tracks, cfg.seed)?;

    let mut confusion = vec![vec![0usize; N_EMOTIONS]; N_EMOTIONS];
    let mut dynamic_hits = 0;
    let mut static_hits = 0;
    let mut intensity_hits = 0;
    for &i in &data.val {
        let rec = &data.records[i];
        let out = video_emotion(&model, track(i))?;
        let predicted = argmax(out.emotion_logits.data());
        confusion[rec.emotion][predicted] += 1;
        if predicted == rec.emotion {
            dynamic_hits += 1;
        }
        if argmax(out.intensity_logits.data()) == rec.intensity {
            intensity_hits += 1;
        }
        if static_vote(track(i), &static_head)? == rec.emotion {
            static_hits += 1;
        }
    }
    let n = data.val.len() as f64;
    let report = ClassifierReport {
        epoch_losses,
        confusion,
        dynamic_accuracy: dynamic_hits as f64 / n,
        static_accuracy: static_hits as f64 / n,
        intensity_accuracy: intensity_hits as f64 / n,
    };
    Ok((model, report))
}

/// Weights of the per-frame baseline: one hidden layer so it can read
/// instantaneous shape, but no access to neighboring frames.
struct StaticHead {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl StaticHead {
    fn logits_node(&self, g: &mut Graph, x: NodeId, trainable: bool) -> Result<(NodeId, Vec<NodeId>)> {
        let bindv = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.input(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let w1 = bindv(g, &self.w1);
        let b1 = bindv(g, &self.b1);
        let w2 = bindv(g, &self.w2);
        let b2 = bindv(g, &self.b2);
        let h = linear(g, x, w1, Some(b1))?;
        let ha = g.gelu(h)?;
        let logits = linear(g, ha, w2, Some(b2))?;
        Ok((logits, vec![w1, b1, w2, b2]))
    }
}

/// Trains the motion-blind baseline: full-batch gradient steps on every
/// individual training frame.
fn train_static_head(data: &Dataset, tracks: &[Option<Tensor>], seed: u64) -> Result<StaticHead> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for &i in &data.train {
        let t = tracks[i].as_ref().expect("track precomputed");
        rows.extend_from_slice(t.data());
        labels.extend(std::iter::repeat(data.records[i].emotion).take(t.shape()[0]));
    }
    let x = Tensor::from_vec(&[labels.len(), EMOTION_WIDTH], rows)?;
    let mut rng = seeds::rng_for(seed, "static-head", 0);
    let mut head = StaticHead {
        w1: Tensor::randn(
            &[EMOTION_WIDTH, STATIC_HEAD_HIDDEN],
            (EMOTION_WIDTH as f64).powf(-0.5),
            &mut rng,
        ),
        b1: Tensor::zeros(&[STATIC_HEAD_HIDDEN]),
        w2: Tensor::randn(
            &[STATIC_HEAD_HIDDEN, N_EMOTIONS],
            (STATIC_HEAD_HIDDEN as f64).powf(-0.5),
            &mut rng,
        ),
        b2: Tensor::zeros(&[N_EMOTIONS]),
    };
    let mut opt = Adam::new(AdamConfig {
        lr: STATIC_HEAD_LR,
        ..AdamConfig::default()
    });
    for _ in 0..STATIC_HEAD_STEPS {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let (logits, ids) = head.logits_node(&mut g, xn, true)?;
        let loss = g.cross_entropy_logits(logits, &labels)?;
        let grads = g.backward(loss)?;
        let owned: Vec<Tensor> = ids.iter().map(|id| grads.get_or_zeros(*id, &g)).collect();
        let grad_refs: Vec<&Tensor> = owned.iter().collect();
        opt.step(
            &mut [&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2],
            &grad_refs,
        )?;
    }
    Ok(head)
}

/// Majority vote over per-frame argmax decisions; ties go to the smallest
/// class id.
fn static_vote(track: &Tensor, head: &StaticHead) -> Result<usize> {
    let mut g = Graph::new();
    let x = g.constant(track.clone());
    let (logits, _) = head.logits_node(&mut g, x, false)?;
    let ld = g.value(logits).data();
    let mut votes = [0usize; N_EMOTIONS];
    for f in 0..track.shape()[0] {
        votes[argmax(&ld[f * N_EMOTIONS..(f + 1) * N_EMOTIONS])] += 1;
    }
    let mut best = 0;
    for (k, v) in votes.iter().enumerate() {
        if *v > votes[best] {
            best = k;
        }
    }
    Ok(best)
}
