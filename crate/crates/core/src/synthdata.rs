//! Procedural dataset with exactly known generative factors.
//!
//! Every clip is the sum of two coefficient-space fields: a fast mouth
//! articulation track driven by a symbol sequence (the stand-in for speech)
//! and a slow whole-face affect field that rotates in one of four orthonormal
//! coefficient planes. The mouth block and the face block of the expression
//! basis touch disjoint vertex sets, so the two fields never mix in vertex
//! space and evaluation can read each factor back exactly.
//!
//! Affect classes come in pairs that share a plane and differ only in
//! rotation period; the rotation phase is drawn fresh per sample and never
//! reaches the model inputs. A single frame of a class is therefore
//! distributed identically to a frame of its plane partner, and the
//! phase-averaged affect field is zero: telling classes apart requires
//! temporal integration, which is exactly what the rest of the pipeline is
//! supposed to learn.
//!
//! Affect adds no jaw motion and no mouth-block coefficients, so a clip's
//! mouth displacement depends on the articulation factor alone; the mouth
//! contribution of every affect class is identically zero.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use ndgrad::Tensor;

use crate::archive::{Archive, ArchiveBuilder};
use crate::error::{CoreError, Result};
use crate::face::{gen, FaceAssets, MOTION_DIM, N_EXPR};
use crate::seeds;

pub const N_EMOTIONS: usize = 8;
pub const N_INTENSITIES: usize = 3;
pub const EMOTION_NAMES: [&str; N_EMOTIONS] = [
    "neutral",
    "happiness",
    "sadness",
    "surprise",
    "fear",
    "disgust",
    "anger",
    "contempt",
];
pub const INTENSITY_NAMES: [&str; N_INTENSITIES] = ["mild", "medium", "high"];
/// Affect amplitude multiplier per intensity level.
pub const INTENSITY_SCALES: [f64; N_INTENSITIES] = [0.35, 0.7, 1.0];
/// Articulation symbols; the first half are open-jaw poses, the second half
/// closed-jaw poses, and segments alternate between the halves.
pub const N_SYMBOLS: usize = 12;
pub const SPEECH_DIM: usize = 64;
/// Non-neutral classes pair up into rotation planes: (1,2), (3,4), (5,6), (7).
pub const N_PLANES: usize = 4;
/// Rotation periods in frames for the slow and fast member of a plane pair.
pub const PERIODS: [usize; 2] = [64, 32];
pub const FPS: f64 = 25.0;

const SMOOTH_KERNEL: [f64; 3] = [0.25, 0.5, 0.25];
const GROUP_BASE_NORM: f64 = 0.10;
const SYMBOL_DETAIL_NORM: f64 = 0.05;
const JAW_OPEN: f64 = 0.22;
const JAW_CLOSED: f64 = 0.04;
const JAW_WIGGLE: f64 = 0.02;
const EMOTION_AMP: f64 = 0.12;

/// Plane index for a non-neutral class; `None` for neutral.
pub fn class_plane(class: usize) -> Option<usize> {
    (1..N_EMOTIONS).contains(&class).then(|| (class - 1) / 2)
}

/// Rotation period in frames for a non-neutral class.
pub fn class_period(class: usize) -> Option<usize> {
    (1..N_EMOTIONS).contains(&class).then(|| PERIODS[(class - 1) % 2])
}

/// Seeded lookup tables shared by the generator and the factor readouts.
/// Depends only on the seed and the basis split, never on dataset size, so
/// datasets of different lengths generated from one seed agree on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorBook {
    /// Mouth-block coefficient pose per symbol, `[N_SYMBOLS][mouth_coeffs]`.
    pub symbol_mouth: Vec<Vec<f64>>,
    /// Jaw axis-angle target per symbol; component 0 opens the mouth.
    pub symbol_jaw: Vec<[f64; 3]>,
    /// Face-block rotation frames; all `2 * N_PLANES` vectors are jointly
    /// orthonormal, so distinct planes are orthogonal.
    pub plane_u: Vec<Vec<f64>>,
    pub plane_v: Vec<Vec<f64>>,
    /// Affect coefficient amplitude at full intensity.
    pub emotion_amp: f64,
    /// Unit embedding per symbol; the speech track is their smoothed steps.
    pub speech_embed: Vec<Vec<f64>>,
}

impl FactorBook {
    pub fn seeded(seed: u64, mouth_coeffs: usize, face_coeffs: usize) -> Self {
        let mut rng = seeds::rng_for(seed, "book-symbols", 0);
        let open_base = scaled_gaussian(&mut rng, mouth_coeffs, GROUP_BASE_NORM);
        let closed_base = scaled_gaussian(&mut rng, mouth_coeffs, GROUP_BASE_NORM);
        let mut symbol_mouth = Vec::with_capacity(N_SYMBOLS);
        let mut symbol_jaw = Vec::with_capacity(N_SYMBOLS);
        for s in 0..N_SYMBOLS {
            let open = s < N_SYMBOLS / 2;
            let base = if open { &open_base } else { &closed_base };
            let detail = scaled_gaussian(&mut rng, mouth_coeffs, SYMBOL_DETAIL_NORM);
            symbol_mouth.push(base.iter().zip(&detail).map(|(b, d)| b + d).collect());
            let pitch = if open { JAW_OPEN } else { JAW_CLOSED };
            let mut jaw = [pitch, 0.0, 0.0];
            for j in &mut jaw {
                *j += rng.gen_range(-JAW_WIGGLE..JAW_WIGGLE);
            }
            symbol_jaw.push(jaw);
        }

        let mut rng = seeds::rng_for(seed, "book-planes", 0);
        let mut frames: Vec<Vec<f64>> = (0..2 * N_PLANES)
            .map(|_| gaussian_vec(&mut rng, face_coeffs))
            .collect();
        gen::orthonormalize(&mut frames);
        let plane_u = (0..N_PLANES).map(|p| frames[2 * p].clone()).collect();
        let plane_v = (0..N_PLANES).map(|p| frames[2 * p + 1].clone()).collect();

        let mut rng = seeds::rng_for(seed, "book-speech", 0);
        let speech_embed = (0..N_SYMBOLS)
            .map(|_| {
                let mut e = gaussian_vec(&mut rng, SPEECH_DIM);
                gen::normalize(&mut e);
                e
            })
            .collect();

        FactorBook {
            symbol_mouth,
            symbol_jaw,
            plane_u,
            plane_v,
            emotion_amp: EMOTION_AMP,
            speech_embed,
        }
    }

    pub fn mouth_coeffs(&self) -> usize {
        self.symbol_mouth[0].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub frames: usize,
    pub n_identities: usize,
    /// How many of the highest identity ids are held out for validation.
    pub n_val_identities: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_samples: 248,
            frames: 64,
            n_identities: 8,
            n_val_identities: 2,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(CoreError::invalid("dataset needs at least two identities"));
        }
        if self.n_val_identities == 0 || self.n_val_identities >= self.n_identities {
            return Err(CoreError::invalid(
                "validation identities must leave at least one training identity",
            ));
        }
        if self.frames < 8 {
            return Err(CoreError::invalid("dataset needs at least 8 frames per clip"));
        }
        if self.n_samples < N_EMOTIONS * N_INTENSITIES {
            return Err(CoreError::invalid(format!(
                "{} samples cannot populate every emotion-intensity cell ({} needed)",
                self.n_samples,
                N_EMOTIONS * N_INTENSITIES
            )));
        }
        Ok(())
    }

    pub fn is_val_identity(&self, identity: usize) -> bool {
        identity >= self.n_identities - self.n_val_identities
    }
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub emotion: usize,
    pub intensity: usize,
    pub identity: usize,
    /// Affect rotation phase, uniform per sample; never visible to the model.
    pub phase: f64,
    /// Identity-specific articulation strength scaling the content field.
    pub articulation: f64,
    pub beta: Vec<f64>,
    /// `(symbol, frames)` runs covering the clip; groups alternate.
    pub segments: Vec<(usize, usize)>,
    /// `[T, SPEECH_DIM]`.
    pub speech: Tensor,
    /// `[T, MOTION_DIM]`.
    pub motion: Tensor,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub book: FactorBook,
    pub records: Vec<SampleRecord>,
    /// Record indices with a training identity.
    pub train: Vec<usize>,
    /// Record indices with a held-out identity.
    pub val: Vec<usize>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn scaled_gaussian(rng: &mut ChaCha8Rng, n: usize, norm: f64) -> Vec<f64> {
    let mut v = gaussian_vec(rng, n);
    gen::normalize(&mut v);
    for x in &mut v {
        *x *= norm;
    }
    v
}

/// Alternating open/closed symbol runs covering `frames` exactly; every run
/// lasts 2 to 6 frames.
fn sample_segments(rng: &mut ChaCha8Rng, frames: usize) -> Vec<(usize, usize)> {
    let mut open = rng.gen::<bool>();
    let mut out = Vec::new();
    let mut remaining = frames;
    while remaining > 0 {
        let mut dur = rng.gen_range(2..=5);
        // Absorb a would-be 1-frame leftover so run lengths stay in 2..=6.
        if dur >= remaining || remaining - dur == 1 {
            dur = remaining;
        }
        let symbol = if open {
            rng.gen_range(0..N_SYMBOLS / 2)
        } else {
            rng.gen_range(N_SYMBOLS / 2..N_SYMBOLS)
        };
        out.push((symbol, dur));
        remaining -= dur;
        open = !open;
    }
    out
}

fn step_rows<F: Fn(usize) -> Vec<f64>>(
    segments: &[(usize, usize)],
    frames: usize,
    row: F,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(frames);
    for &(symbol, dur) in segments {
        let r = row(symbol);
        for _ in 0..dur {
            out.push(r.clone());
        }
    }
    assert_eq!(out.len(), frames, "segment durations must cover the clip");
    out
}

/// One pass of the 3-tap kernel with replicated edges. The taps are dyadic
/// and the quarters are summed first, so constant runs pass through bitwise.
fn smooth_rows(rows: &mut [Vec<f64>]) {
    let t_len = rows.len();
    let src = rows.to_vec();
    for t in 0..t_len {
        let prev = &src[t.saturating_sub(1)];
        let next = &src[(t + 1).min(t_len - 1)];
        let here = &src[t];
        for (i, v) in rows[t].iter_mut().enumerate() {
            *v = SMOOTH_KERNEL[1] * here[i] + (SMOOTH_KERNEL[0] * prev[i] + SMOOTH_KERNEL[2] * next[i]);
        }
    }
}

/// Smoothed mouth-block and jaw tracks for a symbol run, scaled by the
/// identity's articulation strength.
fn content_rows(
    book: &FactorBook,
    segments: &[(usize, usize)],
    articulation: f64,
    frames: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut mouth = step_rows(segments, frames, |s| {
        book.symbol_mouth[s].iter().map(|v| v * articulation).collect()
    });
    let mut jaw = step_rows(segments, frames, |s| {
        book.symbol_jaw[s].iter().map(|v| v * articulation).collect()
    });
    smooth_rows(&mut mouth);
    smooth_rows(&mut jaw);
    (mouth, jaw)
}

fn speech_rows(book: &FactorBook, segments: &[(usize, usize)], frames: usize) -> Vec<Vec<f64>> {
    let mut rows = step_rows(segments, frames, |s| book.speech_embed[s].clone());
    smooth_rows(&mut rows);
    rows
}

fn affect_rows(
    book: &FactorBook,
    emotion: usize,
    intensity: usize,
    phase: f64,
    frames: usize,
) -> Vec<Vec<f64>> {
    let width = book.plane_u[0].len();
    if emotion == 0 {
        return vec![vec![0.0; width]; frames];
    }
    let plane = class_plane(emotion).unwrap();
    let period = class_period(emotion).unwrap() as f64;
    let amp = INTENSITY_SCALES[intensity] * book.emotion_amp;
    let (u, v) = (&book.plane_u[plane], &book.plane_v[plane]);
    (0..frames)
        .map(|t| {
            let (s, c) = (TAU * t as f64 / period + phase).sin_cos();
            u.iter().zip(v).map(|(ui, vi)| amp * (c * ui + s * vi)).collect()
        })
        .collect()
}

fn rows_to_tensor(rows: &[Vec<f64>], width: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        debug_assert_eq!(r.len(), width);
        data.extend_from_slice(r);
    }
    Tensor::from_vec(&[rows.len(), width], data).unwrap()
}

fn assemble_motion(
    mouth: &[Vec<f64>],
    face: Option<&[Vec<f64>]>,
    jaw: &[Vec<f64>],
    mouth_coeffs: usize,
) -> Tensor {
    let frames = mouth.len();
    let mut data = vec![0.0; frames * MOTION_DIM];
    for t in 0..frames {
        let row = &mut data[t * MOTION_DIM..(t + 1) * MOTION_DIM];
        row[..mouth_coeffs].copy_from_slice(&mouth[t]);
        if let Some(face) = face {
            row[mouth_coeffs..N_EXPR].copy_from_slice(&face[t]);
        }
        row[N_EXPR..].copy_from_slice(&jaw[t]);
    }
    Tensor::from_vec(&[frames, MOTION_DIM], data).unwrap()
}

/// The articulation-only motion a clip would have had with a neutral affect
/// field; bitwise equal to the generator's content component.
pub fn content_reference(book: &FactorBook, record: &SampleRecord) -> Result<Tensor> {
    let frames = record.motion.shape()[0];
    let covered: usize = record.segments.iter().map(|(_, d)| d).sum();
    if covered != frames {
        return Err(CoreError::invalid(format!(
            "content track covers {covered} frames, motion has {frames}"
        )));
    }
    let (mouth, jaw) = content_rows(book, &record.segments, record.articulation, frames);
    Ok(assemble_motion(&mouth, None, &jaw, book.mouth_coeffs()))
}

/// The affect field alone, widened to full motion rows (zero mouth and jaw).
pub fn emotion_offsets(
    book: &FactorBook,
    emotion: usize,
    intensity: usize,
    phase: f64,
    frames: usize,
) -> Result<Tensor> {
    if emotion >= N_EMOTIONS || intensity >= N_INTENSITIES {
        return Err(CoreError::invalid(format!(
            "emotion {emotion} / intensity {intensity} out of range"
        )));
    }
    let mc = book.mouth_coeffs();
    let face = affect_rows(book, emotion, intensity, phase, frames);
    let mouth = vec![vec![0.0; mc]; frames];
    let jaw = vec![vec![0.0; 3]; frames];
    Ok(assemble_motion(&mouth, Some(&face), &jaw, mc))
}

pub fn generate_dataset(assets: &FaceAssets, spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mc = assets.mouth_coeffs;
    let face_coeffs = N_EXPR - mc;
    if face_coeffs < 2 * N_PLANES {
        return Err(CoreError::invalid(format!(
            "{face_coeffs} face-block coefficients cannot hold {N_PLANES} affect planes"
        )));
    }
    let book = FactorBook::seeded(seed, mc, face_coeffs);

    let identities: Vec<(Vec<f64>, f64)> = (0..spec.n_identities)
        .map(|id| {
            let mut rng = seeds::rng_for(seed, "identity", id as u64);
            let beta = scaled_gaussian(&mut rng, assets.n_identity(), 0.25 * (assets.n_identity() as f64).sqrt());
            let articulation = 0.9 + 0.2 * id as f64 / (spec.n_identities - 1) as f64;
            (beta, articulation)
        })
        .collect();

    validate_factors(assets, &book, &identities)?;

    let cells = N_EMOTIONS * N_INTENSITIES;
    let mut records = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let cell = i % cells;
        let emotion = cell % N_EMOTIONS;
        let intensity = cell / N_EMOTIONS;
        let identity = (i / cells) % spec.n_identities;
        let (beta, articulation) = &identities[identity];

        let mut rng = seeds::rng_for(seed, "sample", i as u64);
        let phase = rng.gen::<f64>() * TAU;
        let segments = sample_segments(&mut rng, spec.frames);

        let (mouth, jaw) = content_rows(&book, &segments, *articulation, spec.frames);
        let face = affect_rows(&book, emotion, intensity, phase, spec.frames);
        let motion = assemble_motion(&mouth, Some(&face), &jaw, mc);
        let speech = rows_to_tensor(&speech_rows(&book, &segments, spec.frames), SPEECH_DIM);

        records.push(SampleRecord {
            emotion,
            intensity,
            identity,
            phase,
            articulation: *articulation,
            beta: beta.clone(),
            segments,
            speech,
            motion,
        });
    }

    validate_spectra(&records, mc)?;

    let (train, val) = split_indices(spec, &records);
    Ok(Dataset {
        spec: spec.clone(),
        seed,
        book,
        records,
        train,
        val,
    })
}

fn split_indices(spec: &DatasetSpec, records: &[SampleRecord]) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if spec.is_val_identity(r.identity) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// Construction invariants checked on every generated dataset: the two basis
/// blocks touch disjoint vertex sets, the affect planes are orthonormal, and
/// jaw spill outside the mouth stays under a tenth of the content energy.
fn validate_factors(
    assets: &FaceAssets,
    book: &FactorBook,
    identities: &[(Vec<f64>, f64)],
) -> Result<()> {
    let n = assets.n_vertices();
    let mc = assets.mouth_coeffs;
    let mut in_mouth = vec![false; n];
    for &v in &assets.mouth {
        in_mouth[v] = true;
    }
    let basis = assets.expression_basis.data();
    for vert in 0..n {
        for c in 0..3 {
            let row = 3 * vert + c;
            let (lo, hi) = if in_mouth[vert] { (mc, N_EXPR) } else { (0, mc) };
            for col in lo..hi {
                if basis[row * N_EXPR + col] != 0.0 {
                    return Err(CoreError::invalid(format!(
                        "expression basis column {col} touches vertex {vert} outside its block"
                    )));
                }
            }
        }
    }

    let frames: Vec<&Vec<f64>> = book.plane_u.iter().chain(&book.plane_v).collect();
    for (a, fa) in frames.iter().enumerate() {
        for (b, fb) in frames.iter().enumerate() {
            let dot: f64 = fa.iter().zip(fb.iter()).map(|(x, y)| x * y).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-9 {
                return Err(CoreError::invalid("affect plane vectors are not orthonormal"));
            }
        }
    }

    // Jaw motion is part of the content field; probe every symbol pose under
    // every identity and bound its energy spill past the mouth.
    for (beta, articulation) in identities {
        let rest = assets.identity_mesh(beta)?;
        for s in 0..N_SYMBOLS {
            let mut psi = [0.0; N_EXPR];
            for (k, v) in book.symbol_mouth[s].iter().enumerate() {
                psi[k] = v * articulation;
            }
            let jaw = book.symbol_jaw[s].map(|v| v * articulation);
            let mesh = assets.synthesize_from_rest(&rest, &psi, &jaw)?;
            let (mut outside, mut total) = (0.0, 0.0);
            for vert in 0..n {
                let mut e = 0.0;
                for c in 0..3 {
                    let d = mesh.data()[3 * vert + c] - rest.data()[3 * vert + c];
                    e += d * d;
                }
                total += e;
                if !in_mouth[vert] {
                    outside += e;
                }
            }
            let share = outside / total;
            if share > 0.10 {
                return Err(CoreError::invalid(format!(
                    "content field leaks {share:.3} of its energy outside the mouth"
                )));
            }
        }
    }
    Ok(())
}

/// `|X_k|^2` for every bin of a naive DFT.
fn bin_powers(track: &[f64]) -> Vec<f64> {
    let t_len = track.len();
    (0..t_len)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in track.iter().enumerate() {
                let ang = TAU * (k * t) as f64 / t_len as f64;
                re += x * ang.cos();
                im -= x * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Non-DC spectral energy of `track` split at `cut_hz`: `(below, above)`.
fn band_energy(track: &[f64], cut_hz: f64) -> (f64, f64) {
    let t_len = track.len();
    let powers = bin_powers(track);
    let (mut below, mut above) = (0.0, 0.0);
    for (k, p) in powers.iter().enumerate().skip(1) {
        let hz = k.min(t_len - k) as f64 * FPS / t_len as f64;
        if hz < cut_hz {
            below += p;
        } else {
            above += p;
        }
    }
    (below, above)
}

/// Frequency-separation invariant, checked on every generated dataset: the
/// content field concentrates above 2 Hz, the affect field below 1 Hz.
fn validate_spectra(records: &[SampleRecord], mouth_coeffs: usize) -> Result<()> {
    let (mut content_low, mut content_high) = (0.0, 0.0);
    let (mut affect_low, mut affect_high) = (0.0, 0.0);
    for rec in records {
        let frames = rec.motion.shape()[0];
        let data = rec.motion.data();
        let mut track = vec![0.0; frames];
        let content_cols = (0..mouth_coeffs).chain(N_EXPR..MOTION_DIM);
        for col in content_cols {
            for (t, x) in track.iter_mut().enumerate() {
                *x = data[t * MOTION_DIM + col];
            }
            let (lo, hi) = band_energy(&track, 2.0);
            content_low += lo;
            content_high += hi;
        }
        for col in mouth_coeffs..N_EXPR {
            for (t, x) in track.iter_mut().enumerate() {
                *x = data[t * MOTION_DIM + col];
            }
            let (lo, hi) = band_energy(&track, 1.0);
            affect_low += lo;
            affect_high += hi;
        }
    }
    let content_frac = content_high / (content_low + content_high);
    if !(content_frac > 0.5) {
        return Err(CoreError::invalid(format!(
            "content spectrum: only {content_frac:.3} of non-DC energy above 2 Hz"
        )));
    }
    // The affect tones sit at 0.39 and 0.78 Hz. When the clip covers whole
    // periods the window resolves them exactly; a clip that cuts the slow
    // period short leaks tone energy upward, so only the majority bound can
    // be demanded there.
    let resolved = records
        .first()
        .map_or(true, |r| r.motion.shape()[0] % PERIODS[0] == 0);
    let affect_min = if resolved { 0.999 } else { 0.75 };
    let affect_frac = affect_low / (affect_low + affect_high);
    if !(affect_frac > affect_min) {
        return Err(CoreError::invalid(format!(
            "affect spectrum: only {affect_frac:.6} of non-DC energy below 1 Hz (need > {affect_min})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OracleReading {
    pub emotion: usize,
    /// Meaningful only when `emotion != 0`; zero for neutral readings.
    pub intensity: usize,
    /// Mean squared projection onto each rotation plane.
    pub plane_energy: Vec<f64>,
}

/// Reads the affect class back from a motion sequence by projecting the
/// per-frame expression displacement (no jaw, mouth vertices excluded) onto
/// the plane fields and matching the rotation period. Exact on clean data:
/// the content field is invisible to these projections by construction.
pub fn oracle_emotion(assets: &FaceAssets, book: &FactorBook, motion: &Tensor) -> Result<OracleReading> {
    let shape = motion.shape();
    if shape.len() != 2 || shape[1] != MOTION_DIM {
        return Err(CoreError::invalid(format!(
            "motion must be [T, {MOTION_DIM}], got {shape:?}"
        )));
    }
    let frames = shape[0];
    let mc = assets.mouth_coeffs;
    let n = assets.n_vertices();
    let mut in_mouth = vec![false; n];
    for &v in &assets.mouth {
        in_mouth[v] = true;
    }

    let field = |coeffs: &[f64]| -> Result<Vec<f64>> {
        let mut psi = vec![0.0; N_EXPR];
        psi[mc..].copy_from_slice(coeffs);
        Ok(assets.expression_displacement(&psi)?.data().to_vec())
    };
    let planes: Vec<(Vec<f64>, Vec<f64>)> = (0..N_PLANES)
        .map(|p| Ok((field(&book.plane_u[p])?, field(&book.plane_v[p])?)))
        .collect::<Result<_>>()?;

    let mut a = vec![vec![0.0; frames]; N_PLANES];
    let mut b = vec![vec![0.0; frames]; N_PLANES];
    for t in 0..frames {
        let psi = &motion.data()[t * MOTION_DIM..t * MOTION_DIM + N_EXPR];
        let disp = assets.expression_displacement(psi)?;
        for (p, (u, v)) in planes.iter().enumerate() {
            let (mut du, mut dv) = (0.0, 0.0);
            for vert in 0..n {
                if in_mouth[vert] {
                    continue;
                }
                for c in 0..3 {
                    let row = 3 * vert + c;
                    du += disp.data()[row] * u[row];
                    dv += disp.data()[row] * v[row];
                }
            }
            a[p][t] = du;
            b[p][t] = dv;
        }
    }

    let plane_energy: Vec<f64> = (0..N_PLANES)
        .map(|p| {
            a[p].iter().zip(&b[p]).map(|(x, y)| x * x + y * y).sum::<f64>() / frames as f64
        })
        .collect();
    let best = (0..N_PLANES)
        .max_by(|&x, &y| plane_energy[x].total_cmp(&plane_energy[y]))
        .unwrap();
    let threshold = (0.5 * INTENSITY_SCALES[0] * book.emotion_amp).powi(2);
    if plane_energy[best] < threshold {
        return Ok(OracleReading {
            emotion: 0,
            intensity: 0,
            plane_energy,
        });
    }

    let slow = 2 * best + 1;
    let fast = 2 * best + 2;
    let emotion = if fast >= N_EMOTIONS {
        slow
    } else {
        let pw_slow = rotation_power(&a[best], &b[best], PERIODS[0]);
        let pw_fast = rotation_power(&a[best], &b[best], PERIODS[1]);
        if pw_slow >= pw_fast {
            slow
        } else {
            fast
        }
    };

    let scale = plane_energy[best].sqrt() / book.emotion_amp;
    let intensity = (0..N_INTENSITIES)
        .min_by(|&x, &y| {
            (INTENSITY_SCALES[x] - scale)
                .abs()
                .total_cmp(&(INTENSITY_SCALES[y] - scale).abs())
        })
        .unwrap();

    Ok(OracleReading {
        emotion,
        intensity,
        plane_energy,
    })
}

/// Spectral power of the complex track `a + ib` at `period`, both rotation
/// directions summed.
fn rotation_power(a: &[f64], b: &[f64], period: usize) -> f64 {
    let w = TAU / period as f64;
    let (mut pre, mut pim, mut nre, mut nim) = (0.0, 0.0, 0.0, 0.0);
    for t in 0..a.len() {
        let (s, c) = (w * t as f64).sin_cos();
        pre += a[t] * c + b[t] * s;
        pim += b[t] * c - a[t] * s;
        nre += a[t] * c - b[t] * s;
        nim += b[t] * c + a[t] * s;
    }
    pre * pre + pim * pim + nre * nre + nim * nim
}

/// Mean distance over frames and mouth vertices between a generated motion
/// and the clip's articulation-only reference, both synthesized with the
/// clip's identity. Zero, exactly, when the generated motion carries the
/// clip's content: no affect class moves mouth vertices.
pub fn oracle_lip_error(
    assets: &FaceAssets,
    book: &FactorBook,
    generated: &Tensor,
    record: &SampleRecord,
) -> Result<f64> {
    let shape = generated.shape();
    let frames = record.motion.shape()[0];
    if shape.len() != 2 || shape[1] != MOTION_DIM || shape[0] != frames {
        return Err(CoreError::invalid(format!(
            "generated motion must be [{frames}, {MOTION_DIM}], got {shape:?}"
        )));
    }
    let reference = content_reference(book, record)?;
    let gen_meshes = assets.synthesize_sequence(&record.beta, generated)?;
    let ref_meshes = assets.synthesize_sequence(&record.beta, &reference)?;
    let mut sum = 0.0;
    for (g, r) in gen_meshes.iter().zip(&ref_meshes) {
        for &v in &assets.mouth {
            let mut d2 = 0.0;
            for c in 0..3 {
                let d = g.data()[3 * v + c] - r.data()[3 * v + c];
                d2 += d * d;
            }
            sum += d2.sqrt();
        }
    }
    Ok(sum / (frames * assets.mouth.len()) as f64)
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format_version: u32,
    seed: u64,
    spec: DatasetSpec,
    book: FactorBook,
    samples: Vec<SampleMeta>,
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    file: String,
    emotion: usize,
    intensity: usize,
    identity: usize,
    phase: f64,
    articulation: f64,
    beta: Vec<f64>,
    segments: Vec<(usize, usize)>,
}

const FORMAT_VERSION: u32 = 1;

impl Dataset {
    /// Writes a JSON index plus one archive per sample. Byte-identical for
    /// identical inputs.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let mut samples = Vec::with_capacity(self.records.len());
        for (i, rec) in self.records.iter().enumerate() {
            let file = format!("sample-{i:04}.arch");
            ArchiveBuilder::new("sample")
                .meta(serde_json::json!({ "index": i }))
                .tensor("motion", &rec.motion)
                .tensor("speech", &rec.speech)
                .write(&dir.join(&file))?;
            samples.push(SampleMeta {
                file,
                emotion: rec.emotion,
                intensity: rec.intensity,
                identity: rec.identity,
                phase: rec.phase,
                articulation: rec.articulation,
                beta: rec.beta.clone(),
                segments: rec.segments.clone(),
            });
        }
        let index = IndexFile {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            spec: self.spec.clone(),
            book: self.book.clone(),
            samples,
        };
        let mut text = serde_json::to_string_pretty(&index)?;
        text.push('\n');
        let path = dir.join("index.json");
        fs::write(&path, text).map_err(|e| CoreError::io(path, e))
    }

    /// Loads a saved dataset. Tensor payloads are stored in 32-bit, so
    /// motion and speech come back narrowed; everything else is exact.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
        let index: IndexFile = serde_json::from_str(&text)?;
        if index.format_version != FORMAT_VERSION {
            return Err(CoreError::archive(
                &path,
                format!("unsupported dataset format version {}", index.format_version),
            ));
        }
        index.spec.validate()?;
        if index.samples.len() != index.spec.n_samples {
            return Err(CoreError::archive(
                &path,
                format!(
                    "index lists {} samples, spec declares {}",
                    index.samples.len(),
                    index.spec.n_samples
                ),
            ));
        }
        let mut records = Vec::with_capacity(index.samples.len());
        for (i, meta) in index.samples.iter().enumerate() {
            let sample_path = dir.join(&meta.file);
            let arch = Archive::read(&sample_path)?;
            arch.expect_kind("sample")?;
            let motion = arch.tensor("motion")?;
            let speech = arch.tensor("speech")?;
            let frames = index.spec.frames;
            if motion.shape() != [frames, MOTION_DIM] || speech.shape() != [frames, SPEECH_DIM] {
                return Err(CoreError::archive(
                    &sample_path,
                    format!(
                        "sample {i} shapes {:?}/{:?} do not match the spec",
                        motion.shape(),
                        speech.shape()
                    ),
                ));
            }
            records.push(SampleRecord {
                emotion: meta.emotion,
                intensity: meta.intensity,
                identity: meta.identity,
                phase: meta.phase,
                articulation: meta.articulation,
                beta: meta.beta.clone(),
                segments: meta.segments.clone(),
                speech,
                motion,
            });
        }
        let (train, val) = split_indices(&index.spec, &records);
        Ok(Dataset {
            spec: index.spec,
            seed: index.seed,
            book: index.book,
            records,
            train,
            val,
        })
    }
}
