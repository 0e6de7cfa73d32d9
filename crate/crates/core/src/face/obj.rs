//! Wavefront OBJ export for synthesized meshes. Positions are written with
//! six decimals; face indices are 1-based.

use crate::error::{CoreError, Result};
use ndgrad::Tensor;
use std::io::{BufRead, Write};
use std::path::Path;

pub fn write_obj(w: &mut impl Write, vertices: &Tensor, triangles: &[[usize; 3]]) -> Result<()> {
    let shape = vertices.shape();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(CoreError::invalid(format!(
            "vertices must be [n, 3], got {shape:?}"
        )));
    }
    let n = shape[0];
    let io_err = |e| CoreError::io(Path::new("<obj stream>"), e);
    for v in 0..n {
        let p = &vertices.data()[3 * v..3 * v + 3];
        writeln!(w, "v {:.6} {:.6} {:.6}", p[0], p[1], p[2]).map_err(io_err)?;
    }
    for t in triangles {
        if t.iter().any(|i| *i >= n) {
            return Err(CoreError::invalid("triangle index out of range".to_string()));
        }
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io_err)?;
    }
    Ok(())
}

pub fn export_obj(path: &Path, vertices: &Tensor, triangles: &[[usize; 3]]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CoreError::io(path, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut buf = std::io::BufWriter::new(file);
    write_obj(&mut buf, vertices, triangles)?;
    buf.flush().map_err(|e| CoreError::io(path, e))
}

/// Minimal OBJ reader for `v` and triangular `f` lines; used to verify
/// exported files.
pub fn parse_obj(r: impl BufRead) -> Result<(Tensor, Vec<[usize; 3]>)> {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    let bad = |line: &str| CoreError::invalid(format!("malformed obj line: {line}"));
    for line in r.lines() {
        let line = line.map_err(|e| CoreError::io(Path::new("<obj stream>"), e))?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                for _ in 0..3 {
                    let v: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(&line))?;
                    verts.push(v);
                }
            }
            Some("f") => {
                let mut t = [0usize; 3];
                for slot in &mut t {
                    let idx: usize = parts
                        .next()
                        .and_then(|s| s.split('/').next())
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(&line))?;
                    if idx == 0 {
                        return Err(bad(&line));
                    }
                    *slot = idx - 1;
                }
                tris.push(t);
            }
            _ => {}
        }
    }
    let n = verts.len() / 3;
    Ok((Tensor::from_vec(&[n, 3], verts)?, tris))
}
