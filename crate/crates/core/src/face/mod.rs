//! Linear blendshape face model with jaw articulation.
//!
//! A mesh is produced as `skin(template + B_id beta + B_exp psi, theta)`:
//! identity and expression offsets are linear in their coefficient vectors,
//! then the jaw axis-angle rotation is applied about a fixed joint, blended
//! per vertex by skinning weights. Motion frames pack `[psi | theta]` into
//! 53 values.

pub(crate) mod gen;
pub mod obj;

pub use gen::{generate_assets, AssetSpec};

use crate::archive::{Archive, ArchiveBuilder};
use crate::error::{CoreError, Result};
use ndgrad::{Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Expression coefficients per frame.
pub const N_EXPR: usize = 50;
/// Jaw axis-angle components per frame.
pub const N_JAW: usize = 3;
/// Motion parameters per frame: expression then jaw.
pub const MOTION_DIM: usize = N_EXPR + N_JAW;

/// Geometry, bases, and region metadata for one face model.
#[derive(Debug, Clone)]
pub struct FaceAssets {
    /// Rest positions, `[n_v, 3]`.
    pub template: Tensor,
    /// Identity offsets, `[3 n_v, n_id]`; column k displaces all coordinates.
    pub identity_basis: Tensor,
    /// Expression offsets, `[3 n_v, N_EXPR]`.
    pub expression_basis: Tensor,
    /// Pivot of the jaw rotation.
    pub jaw_joint: [f64; 3],
    /// Per-vertex jaw blend weight in `[0, 1]`; exactly zero outside the jaw
    /// collar.
    pub skinning: Vec<f64>,
    /// Triangle indices into the vertex list.
    pub triangles: Vec<[usize; 3]>,
    /// Mouth-region vertex ids, sorted ascending.
    pub mouth: Vec<usize>,
    /// Expression vertex ids (everything below the scalp ring), sorted.
    pub expression_region: Vec<usize>,
    /// Leading expression coefficients whose displacement is mouth-localized;
    /// the remainder are whole-face fields.
    pub mouth_coeffs: usize,
}

#[derive(Serialize, Deserialize)]
struct AssetMeta {
    jaw_joint: [f64; 3],
    triangles: Vec<[usize; 3]>,
    mouth: Vec<usize>,
    expression_region: Vec<usize>,
    mouth_coeffs: usize,
}

impl FaceAssets {
    pub fn n_vertices(&self) -> usize {
        self.template.shape()[0]
    }

    pub fn n_identity(&self) -> usize {
        self.identity_basis.shape()[1]
    }

    /// Vertex ids outside both the mouth region and the jaw collar; their
    /// positions depend on expression coefficients only, never on jaw or
    /// identity-neutral articulation.
    pub fn stable_non_mouth(&self) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|i| self.skinning[*i] == 0.0 && !self.mouth.contains(i))
            .collect()
    }

    /// Rest mesh for one identity: `template + B_id beta`, `[n_v, 3]`.
    pub fn identity_mesh(&self, beta: &[f64]) -> Result<Tensor> {
        if beta.len() != self.n_identity() {
            return Err(CoreError::invalid(format!(
                "identity coefficients: expected {}, got {}",
                self.n_identity(),
                beta.len()
            )));
        }
        let n = self.n_vertices();
        let mut out = self.template.data().to_vec();
        let basis = self.identity_basis.data();
        let nb = self.n_identity();
        for (k, b) in beta.iter().enumerate() {
            if *b == 0.0 {
                continue;
            }
            for i in 0..3 * n {
                out[i] += b * basis[i * nb + k];
            }
        }
        Ok(Tensor::from_vec(&[n, 3], out)?)
    }

    /// Expression displacement alone: `B_exp psi` reshaped to `[n_v, 3]`.
    /// Independent of identity and jaw.
    pub fn expression_displacement(&self, psi: &[f64]) -> Result<Tensor> {
        if psi.len() != N_EXPR {
            return Err(CoreError::invalid(format!(
                "expression coefficients: expected {N_EXPR}, got {}",
                psi.len()
            )));
        }
        let n = self.n_vertices();
        let mut out = vec![0.0; 3 * n];
        let basis = self.expression_basis.data();
        for (k, p) in psi.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            for i in 0..3 * n {
                out[i] += p * basis[i * N_EXPR + k];
            }
        }
        Ok(Tensor::from_vec(&[n, 3], out)?)
    }

    /// Full synthesis for one frame.
    pub fn synthesize(&self, beta: &[f64], psi: &[f64], jaw: &[f64; 3]) -> Result<Tensor> {
        let rest = self.identity_mesh(beta)?;
        self.synthesize_from_rest(&rest, psi, jaw)
    }

    /// Synthesis with a precomputed identity rest mesh; the hot path for
    /// sequences.
    pub fn synthesize_from_rest(&self, rest: &Tensor, psi: &[f64], jaw: &[f64; 3]) -> Result<Tensor> {
        let n = self.n_vertices();
        let disp = self.expression_displacement(psi)?;
        let mut mesh = vec![0.0; 3 * n];
        for i in 0..3 * n {
            mesh[i] = rest.data()[i] + disp.data()[i];
        }
        let r = ndgrad::rotation_matrix(*jaw);
        let c = self.jaw_joint;
        for v in 0..n {
            let w = self.skinning[v];
            if w == 0.0 {
                continue;
            }
            let p = [mesh[3 * v], mesh[3 * v + 1], mesh[3 * v + 2]];
            let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            for a in 0..3 {
                let rd = r[a][0] * d[0] + r[a][1] * d[1] + r[a][2] * d[2];
                mesh[3 * v + a] = p[a] + w * (rd + c[a] - p[a]);
            }
        }
        Ok(Tensor::from_vec(&[n, 3], mesh)?)
    }

    /// Synthesizes every frame of a `[T, MOTION_DIM]` motion track.
    pub fn synthesize_sequence(&self, beta: &[f64], motion: &Tensor) -> Result<Vec<Tensor>> {
        let shape = motion.shape();
        if shape.len() != 2 || shape[1] != MOTION_DIM {
            return Err(CoreError::invalid(format!(
                "motion must be [T, {MOTION_DIM}], got {shape:?}"
            )));
        }
        let rest = self.identity_mesh(beta)?;
        let mut out = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let row = &motion.data()[t * MOTION_DIM..(t + 1) * MOTION_DIM];
            let psi = &row[..N_EXPR];
            let jaw = [row[N_EXPR], row[N_EXPR + 1], row[N_EXPR + 2]];
            out.push(self.synthesize_from_rest(&rest, psi, &jaw)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = AssetMeta {
            jaw_joint: self.jaw_joint,
            triangles: self.triangles.clone(),
            mouth: self.mouth.clone(),
            expression_region: self.expression_region.clone(),
            mouth_coeffs: self.mouth_coeffs,
        };
        ArchiveBuilder::new("face-assets")
            .meta(serde_json::to_value(&meta)?)
            .tensor("template", &self.template)
            .tensor("identity_basis", &self.identity_basis)
            .tensor("expression_basis", &self.expression_basis)
            .floats(
                "skinning",
                &[self.skinning.len()],
                self.skinning.iter().map(|v| *v as f32).collect(),
            )
            .write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::read(path)?;
        a.expect_kind("face-assets")?;
        let meta: AssetMeta = a.meta_as()?;
        let template = a.tensor("template")?;
        let identity_basis = a.tensor("identity_basis")?;
        let expression_basis = a.tensor("expression_basis")?;
        let (sk_shape, sk) = a.entry_f32("skinning")?;
        let n = template.shape()[0];
        if template.shape().len() != 2 || template.shape()[1] != 3 {
            return Err(CoreError::archive(path, "template must be [n_v, 3]"));
        }
        if identity_basis.shape()[0] != 3 * n || expression_basis.shape()[0] != 3 * n {
            return Err(CoreError::archive(
                path,
                format!(
                    "basis rows mismatch vertex count: {} and {} for {n} vertices",
                    identity_basis.shape()[0],
                    expression_basis.shape()[0]
                ),
            ));
        }
        if expression_basis.shape()[1] != N_EXPR {
            return Err(CoreError::archive(
                path,
                format!("expression basis must have {N_EXPR} columns"),
            ));
        }
        if sk_shape != [n] {
            return Err(CoreError::archive(path, "skinning weight count mismatch"));
        }
        let skinning: Vec<f64> = sk.iter().map(|v| *v as f64).collect();
        if skinning.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(CoreError::archive(path, "skinning weights outside [0, 1]"));
        }
        for t in &meta.triangles {
            if t.iter().any(|i| *i >= n) {
                return Err(CoreError::archive(path, "triangle index out of range"));
            }
        }
        if meta.mouth.iter().any(|i| *i >= n) || meta.expression_region.iter().any(|i| *i >= n) {
            return Err(CoreError::archive(path, "region index out of range"));
        }
        Ok(FaceAssets {
            template,
            identity_basis,
            expression_basis,
            jaw_joint: meta.jaw_joint,
            skinning,
            triangles: meta.triangles,
            mouth: meta.mouth,
            expression_region: meta.expression_region,
            mouth_coeffs: meta.mouth_coeffs,
        })
    }
}

/// Constant graph nodes for one identity, reused across frames of a
/// sequence so synthesis inside a training graph adds only per-frame ops.
pub struct FaceBinding {
    pub rest_mesh: NodeId,
    pub expression_basis: NodeId,
}

/// Binds the identity rest mesh and expression basis as graph constants.
pub fn bind_face(g: &mut Graph, assets: &FaceAssets, beta: &[f64]) -> Result<FaceBinding> {
    let rest = assets.identity_mesh(beta)?;
    Ok(FaceBinding {
        rest_mesh: g.constant(rest),
        expression_basis: g.constant(assets.expression_basis.clone()),
    })
}

/// Differentiable synthesis of one frame from a `[1, MOTION_DIM]` motion row.
pub fn synthesize_node(
    g: &mut Graph,
    assets: &FaceAssets,
    face: &FaceBinding,
    motion_row: NodeId,
) -> Result<NodeId> {
    let shape = g.value(motion_row).shape();
    if shape != [1, MOTION_DIM] {
        return Err(CoreError::invalid(format!(
            "motion row must be [1, {MOTION_DIM}], got {shape:?}"
        )));
    }
    let n = assets.n_vertices();
    let psi = g.slice_cols(motion_row, 0, N_EXPR)?;
    let psi_col = g.transpose(psi)?;
    let disp = g.matmul(face.expression_basis, psi_col)?;
    let disp_m = g.reshape(disp, &[n, 3])?;
    let mesh = g.add(face.rest_mesh, disp_m)?;
    let jaw_row = g.slice_cols(motion_row, N_EXPR, N_JAW)?;
    let jaw = g.reshape(jaw_row, &[N_JAW])?;
    Ok(g.jaw_rotate(mesh, jaw, assets.jaw_joint, &assets.skinning)?)
}
