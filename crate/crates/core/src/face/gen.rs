//! Procedural construction of face assets.
//!
//! The head is an ellipsoid UV grid. Bases are smooth random sinusoid fields;
//! the expression basis is split into a mouth-localized block and a whole-face
//! block, each orthonormalized in displacement space so coefficient distances
//! transfer to vertex distances.

use super::{FaceAssets, N_EXPR};
use crate::seeds;
use ndgrad::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Parameters for [`generate_assets`].
#[derive(Debug, Clone)]
pub struct AssetSpec {
    /// Latitude rings, poles excluded.
    pub rings: usize,
    /// Longitude columns.
    pub cols: usize,
    /// Ellipsoid radii (x: width, y: height, z: depth).
    pub radii: [f64; 3],
    pub n_identity: usize,
    /// Vertices in the mouth region (nearest to the jaw joint).
    pub mouth_size: usize,
    /// Vertices with nonzero jaw skinning; must contain the mouth.
    pub collar_size: usize,
    /// Leading expression columns that are mouth-localized.
    pub mouth_coeffs: usize,
    pub seed: u64,
}

impl Default for AssetSpec {
    fn default() -> Self {
        AssetSpec {
            rings: 15,
            cols: 20,
            radii: [0.8, 1.0, 0.9],
            n_identity: 10,
            mouth_size: 60,
            collar_size: 75,
            mouth_coeffs: 25,
            seed: 101,
        }
    }
}

/// Largest admissible energy fraction outside the mouth for a mouth-localized
/// expression column.
pub const MOUTH_COLUMN_LEAK_MAX: f64 = 0.10;
/// Largest admissible mouth-energy fraction for a whole-face expression column.
pub const FACE_COLUMN_MOUTH_MAX: f64 = 0.30;

pub fn generate_assets(spec: &AssetSpec) -> FaceAssets {
    assert!(spec.mouth_size <= spec.collar_size);
    let n = spec.rings * spec.cols;
    assert!(spec.collar_size < n);

    let mut verts = Vec::with_capacity(3 * n);
    for i in 0..spec.rings {
        let theta = std::f64::consts::PI * (i as f64 + 1.0) / (spec.rings as f64 + 1.0);
        for j in 0..spec.cols {
            let phi = std::f64::consts::TAU * j as f64 / spec.cols as f64;
            verts.push(spec.radii[0] * theta.sin() * phi.cos());
            verts.push(spec.radii[1] * theta.cos());
            verts.push(spec.radii[2] * theta.sin() * phi.sin());
        }
    }
    let template = Tensor::from_vec(&[n, 3], verts.clone()).unwrap();

    let mut triangles = Vec::with_capacity(2 * (spec.rings - 1) * spec.cols);
    for i in 0..spec.rings - 1 {
        for j in 0..spec.cols {
            let a = i * spec.cols + j;
            let b = i * spec.cols + (j + 1) % spec.cols;
            let c = (i + 1) * spec.cols + j;
            let d = (i + 1) * spec.cols + (j + 1) % spec.cols;
            triangles.push([a, b, c]);
            triangles.push([b, d, c]);
        }
    }

    // Jaw joint sits just inside the lower-front surface.
    let jt = 2.1f64;
    let jaw_joint = [
        0.0,
        0.85 * spec.radii[1] * jt.cos(),
        0.85 * spec.radii[2] * jt.sin(),
    ];

    let mut by_dist: Vec<(f64, usize)> = (0..n)
        .map(|v| {
            let d = dist3(&verts[3 * v..3 * v + 3], &jaw_joint);
            (d, v)
        })
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut mouth: Vec<usize> = by_dist[..spec.mouth_size].iter().map(|p| p.1).collect();
    mouth.sort_unstable();
    // Mirror-symmetric vertex pairs tie in distance; grow the collar until its
    // boundary falls in a gap between distance shells so no pair straddles it
    // and every member keeps a strictly positive weight.
    let mut m = spec.collar_size;
    while by_dist[m].0 - by_dist[m - 1].0 < 1e-9 {
        m += 1;
        assert!(m < n);
    }
    let collar_radius = 0.5 * (by_dist[m - 1].0 + by_dist[m].0);
    let mut skinning = vec![0.0; n];
    for (d, v) in &by_dist[..m] {
        let w = 1.0 - d / collar_radius;
        skinning[*v] = w * w;
    }

    let mut rng = seeds::rng(spec.seed);
    let identity_basis = build_identity_basis(&mut rng, &verts, spec.n_identity);
    let expression_basis = build_expression_basis(&mut rng, &verts, &mouth, &jaw_joint, spec);

    FaceAssets {
        template,
        identity_basis,
        expression_basis,
        jaw_joint,
        skinning,
        triangles,
        mouth,
        // Everything below the scalp ring; emotion features read only these.
        expression_region: (spec.cols..n).collect(),
        mouth_coeffs: spec.mouth_coeffs,
    }
}

fn dist3(a: &[f64], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Sum of a few random sinusoids of position, one independent field per axis.
fn smooth_field(rng: &mut ChaCha8Rng, verts: &[f64], freq: f64) -> Vec<f64> {
    let n = verts.len() / 3;
    let mut out = vec![0.0; 3 * n];
    for axis in 0..3 {
        for wave in 0..4 {
            let amp = rng.gen_range(-1.0..1.0) / (wave as f64 + 1.0);
            let k = [
                rng.gen_range(-freq..freq),
                rng.gen_range(-freq..freq),
                rng.gen_range(-freq..freq),
            ];
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for v in 0..n {
                let p = &verts[3 * v..3 * v + 3];
                let arg = k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase;
                out[3 * v + axis] += amp * arg.sin();
            }
        }
    }
    out
}

pub(crate) fn normalize(col: &mut [f64]) {
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 1e-9, "degenerate basis column");
    for v in col.iter_mut() {
        *v /= norm;
    }
}

/// Energy share of `col` on the rows belonging to `region` vertices.
fn region_fraction(col: &[f64], in_region: &[bool]) -> f64 {
    let mut inside = 0.0;
    let mut total = 0.0;
    for (i, v) in col.iter().enumerate() {
        let e = v * v;
        total += e;
        if in_region[i / 3] {
            inside += e;
        }
    }
    inside / total
}

/// Modified Gram-Schmidt over the given columns, in place.
pub(crate) fn orthonormalize(cols: &mut [Vec<f64>]) {
    for k in 0..cols.len() {
        for j in 0..k {
            let dot: f64 = cols[k].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            for i in 0..cols[k].len() {
                cols[k][i] -= dot * cols[j][i];
            }
        }
        normalize(&mut cols[k]);
    }
}

fn build_identity_basis(rng: &mut ChaCha8Rng, verts: &[f64], n_id: usize) -> Tensor {
    let n = verts.len() / 3;
    let mut cols: Vec<Vec<f64>> = (0..n_id)
        .map(|_| smooth_field(rng, verts, 1.5))
        .collect();
    orthonormalize(&mut cols);
    columns_to_tensor(&cols, 3 * n)
}

fn build_expression_basis(
    rng: &mut ChaCha8Rng,
    verts: &[f64],
    mouth: &[usize],
    jaw_joint: &[f64; 3],
    spec: &AssetSpec,
) -> Tensor {
    let n = verts.len() / 3;
    let mut in_mouth = vec![false; n];
    for v in mouth {
        in_mouth[*v] = true;
    }
    let mouth_radius = mouth
        .iter()
        .map(|v| dist3(&verts[3 * v..3 * v + 3], jaw_joint))
        .fold(0.0f64, f64::max);
    let sigma = 0.6 * mouth_radius;

    // Mouth block: taper fields toward the jaw joint, then zero them outside
    // the region entirely. Orthonormalization mixes columns, which keeps the
    // zero rows zero, so mouth coefficients never move a non-mouth vertex.
    let mut mouth_cols: Vec<Vec<f64>> = (0..spec.mouth_coeffs)
        .map(|_| {
            let mut col = smooth_field(rng, verts, 2.5);
            for v in 0..n {
                let d = dist3(&verts[3 * v..3 * v + 3], jaw_joint);
                let mask = (-(d / sigma) * (d / sigma)).exp();
                for a in 0..3 {
                    col[3 * v + a] *= if in_mouth[v] { mask } else { 0.0 };
                }
            }
            normalize(&mut col);
            col
        })
        .collect();
    orthonormalize(&mut mouth_cols);

    // Face block: low-frequency fields over everything but the mouth, zeroed
    // there by the same argument, so whole-face offsets never move the lips.
    let mut face_cols: Vec<Vec<f64>> = (0..N_EXPR - spec.mouth_coeffs)
        .map(|_| {
            let mut col = smooth_field(rng, verts, 1.2);
            for v in 0..n {
                if in_mouth[v] {
                    for a in 0..3 {
                        col[3 * v + a] = 0.0;
                    }
                }
            }
            normalize(&mut col);
            col
        })
        .collect();
    orthonormalize(&mut face_cols);

    for col in &mouth_cols {
        let leak = 1.0 - region_fraction(col, &in_mouth);
        assert!(leak == 0.0, "mouth column leak {leak}");
        assert!(leak <= MOUTH_COLUMN_LEAK_MAX);
    }
    for col in &face_cols {
        let share = region_fraction(col, &in_mouth);
        assert!(share == 0.0, "face column mouth share {share}");
        assert!(share <= FACE_COLUMN_MOUTH_MAX);
    }

    let mut cols = mouth_cols;
    cols.extend(face_cols);
    columns_to_tensor(&cols, 3 * n)
}

fn columns_to_tensor(cols: &[Vec<f64>], rows: usize) -> Tensor {
    let mut data = vec![0.0; rows * cols.len()];
    for (k, col) in cols.iter().enumerate() {
        assert_eq!(col.len(), rows);
        for i in 0..rows {
            data[i * cols.len() + k] = col[i];
        }
    }
    Tensor::from_vec(&[rows, cols.len()], data).unwrap()
}
