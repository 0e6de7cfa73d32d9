//! Forward kernels and vector-Jacobian products for every graph op.
//!
//! Kernels assume shapes were validated by the [`crate::Graph`] constructors.
//! Each `vjp_*` returns gradients for the op's parents in declaration order;
//! entries are `None` where the caller marked the parent as not needing a
//! gradient.

use crate::tensor::Tensor;

/// Threshold below which the Rodrigues rotation switches to its Taylor
/// expansion to avoid dividing by a vanishing angle.
pub const SMALL_ANGLE: f64 = 1e-8;

const GELU_C: f64 = 0.044_715;

fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

// ── Elementwise ─────────────────────────────────────────────────────────────

pub(crate) fn ew(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new_unchecked(a.shape().to_vec(), data)
}

pub(crate) fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|x| f(*x)).collect();
    Tensor::new_unchecked(a.shape().to_vec(), data)
}

pub(crate) fn gelu(x: f64) -> f64 {
    let u = sqrt_2_over_pi() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_dx(x: f64) -> f64 {
    let u = sqrt_2_over_pi() * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * sqrt_2_over_pi() * (1.0 + 3.0 * GELU_C * x * x)
}

// ── Broadcast ───────────────────────────────────────────────────────────────

/// `out[i, j] = x[i, j] + sign * r[j]`
pub(crate) fn add_row(x: &Tensor, r: &Tensor, sign: f64) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let mut data = x.data().to_vec();
    for i in 0..n {
        for j in 0..d {
            data[i * d + j] += sign * r.data()[j];
        }
    }
    Tensor::new_unchecked(x.shape().to_vec(), data)
}

/// Column sums: `[n, d] -> [d]`, scaled.
pub(crate) fn sum_axis0_scaled(g: &Tensor, d: usize, scale: f64) -> Tensor {
    let n = g.numel() / d;
    let mut out = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            out[j] += scale * g.data()[i * d + j];
        }
    }
    Tensor::new_unchecked(vec![d], out)
}

pub(crate) fn scale(a: &Tensor, c: f64) -> Tensor {
    map(a, |x| x * c)
}

// ── Matmul and friends ──────────────────────────────────────────────────────

/// `[m, k] x [k, n] -> [m, n]` with an i-k-j loop order so the inner loop
/// streams both rows.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.dims2().unwrap();
    let (_, n) = b.dims2().unwrap();
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let crow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = ad[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    Tensor::new_unchecked(vec![m, n], out)
}

/// `a^T x b` without materializing the transpose: `[k, m]^T x [k, n]`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = a.dims2().unwrap();
    let (_, n) = b.dims2().unwrap();
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for kk in 0..k {
        let arow = &ad[kk * m..(kk + 1) * m];
        let brow = &bd[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aik = arow[i];
            if aik == 0.0 {
                continue;
            }
            let crow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    Tensor::new_unchecked(vec![m, n], out)
}

/// `a x b^T`: `[m, k] x [n, k]^T`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.dims2().unwrap();
    let (n, _) = b.dims2().unwrap();
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            crow[j] = acc;
        }
    }
    Tensor::new_unchecked(vec![m, n], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = a.dims2().unwrap();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new_unchecked(vec![n, m], out)
}

// ── Shape ───────────────────────────────────────────────────────────────────

pub(crate) fn concat_cols(parts: &[&Tensor]) -> Tensor {
    let (n, _) = parts[0].dims2().unwrap();
    let total: usize = parts.iter().map(|p| p.dims2().unwrap().1).sum();
    let mut out = vec![0.0; n * total];
    for i in 0..n {
        let mut at = 0;
        for p in parts {
            let (_, d) = p.dims2().unwrap();
            out[i * total + at..i * total + at + d].copy_from_slice(&p.data()[i * d..(i + 1) * d]);
            at += d;
        }
    }
    Tensor::new_unchecked(vec![n, total], out)
}

pub(crate) fn slice_cols(x: &Tensor, start: usize, len: usize) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let mut out = vec![0.0; n * len];
    for i in 0..n {
        out[i * len..(i + 1) * len].copy_from_slice(&x.data()[i * d + start..i * d + start + len]);
    }
    Tensor::new_unchecked(vec![n, len], out)
}

pub(crate) fn gather_rows(x: &Tensor, indices: &[usize]) -> Tensor {
    let (_, d) = x.dims2().unwrap();
    let mut out = vec![0.0; indices.len() * d];
    for (i, &r) in indices.iter().enumerate() {
        out[i * d..(i + 1) * d].copy_from_slice(&x.data()[r * d..(r + 1) * d]);
    }
    Tensor::new_unchecked(vec![indices.len(), d], out)
}

// ── Reductions ──────────────────────────────────────────────────────────────

pub(crate) fn sum_axis1(x: &Tensor) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let out = (0..n)
        .map(|i| x.data()[i * d..(i + 1) * d].iter().sum())
        .collect();
    Tensor::new_unchecked(vec![n], out)
}

pub(crate) fn mean_axis0(x: &Tensor) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    sum_axis0_scaled(x, d, 1.0 / n as f64)
}

// ── Normalization ───────────────────────────────────────────────────────────

pub(crate) fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &x.data()[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            out[i * d + j] = gamma.data()[j] * (row[j] - mean) * inv + beta.data()[j];
        }
    }
    Tensor::new_unchecked(x.shape().to_vec(), out)
}

pub(crate) fn vjp_layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    eps: f64,
    g: &Tensor,
    needs: [bool; 3],
) -> [Option<Tensor>; 3] {
    let (n, d) = x.dims2().unwrap();
    let df = d as f64;
    let mut dx = vec![0.0; n * d];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for i in 0..n {
        let row = &x.data()[i * d..(i + 1) * d];
        let grow = &g.data()[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / df;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
        let inv = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
        let ghat: Vec<f64> = (0..d).map(|j| grow[j] * gamma.data()[j]).collect();
        let mg = ghat.iter().sum::<f64>() / df;
        let mgx = ghat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / df;
        for j in 0..d {
            dx[i * d + j] = inv * (ghat[j] - mg - xhat[j] * mgx);
            dgamma[j] += grow[j] * xhat[j];
            dbeta[j] += grow[j];
        }
    }
    [
        needs[0].then(|| Tensor::new_unchecked(x.shape().to_vec(), dx)),
        needs[1].then(|| Tensor::new_unchecked(vec![d], dgamma)),
        needs[2].then(|| Tensor::new_unchecked(vec![d], dbeta)),
    ]
}

pub(crate) fn softmax(x: &Tensor) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &x.data()[i * d..(i + 1) * d];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..d {
            let e = (row[j] - max).exp();
            out[i * d + j] = e;
            sum += e;
        }
        for j in 0..d {
            out[i * d + j] /= sum;
        }
    }
    Tensor::new_unchecked(x.shape().to_vec(), out)
}

pub(crate) fn vjp_softmax(y: &Tensor, g: &Tensor) -> Tensor {
    let (n, d) = y.dims2().unwrap();
    let mut dx = vec![0.0; n * d];
    for i in 0..n {
        let yrow = &y.data()[i * d..(i + 1) * d];
        let grow = &g.data()[i * d..(i + 1) * d];
        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dx[i * d + j] = yrow[j] * (grow[j] - dot);
        }
    }
    Tensor::new_unchecked(y.shape().to_vec(), dx)
}

/// Mean over rows of `logsumexp(row) - row[target]`.
pub(crate) fn ce_logits(x: &Tensor, targets: &[usize]) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let mut total = 0.0;
    for i in 0..n {
        let row = &x.data()[i * d..(i + 1) * d];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[targets[i]];
    }
    Tensor::scalar(total / n as f64)
}

pub(crate) fn vjp_ce_logits(x: &Tensor, targets: &[usize], g: &Tensor) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let s = softmax(x);
    let mut dx = s.data().to_vec();
    let scale = g.item() / n as f64;
    for i in 0..n {
        dx[i * d + targets[i]] -= 1.0;
        for j in 0..d {
            dx[i * d + j] *= scale;
        }
    }
    Tensor::new_unchecked(x.shape().to_vec(), dx)
}

// ── Temporal convolution ────────────────────────────────────────────────────

pub(crate) fn conv1d_out_len(t: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (t + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

pub(crate) fn conv_t1d_out_len(t: usize, k: usize, stride: usize, pad: usize, out_pad: usize) -> usize {
    (t - 1) * stride + k + out_pad - 2 * pad
}

/// `x: [T, Cin]`, `w: [K, Cin, Cout]` (row-major), zero padding on both ends.
pub(crate) fn conv1d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (t_in, cin) = x.dims2().unwrap();
    let k = w.shape()[0];
    let cout = w.shape()[2];
    let t_out = conv1d_out_len(t_in, k, stride, pad).unwrap();
    let mut out = vec![0.0; t_out * cout];
    for t in 0..t_out {
        let orow = &mut out[t * cout..(t + 1) * cout];
        for kk in 0..k {
            let src = (t * stride + kk) as isize - pad as isize;
            if src < 0 || src >= t_in as isize {
                continue;
            }
            let xrow = &x.data()[src as usize * cin..(src as usize + 1) * cin];
            for ci in 0..cin {
                let xv = xrow[ci];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w.data()[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                for co in 0..cout {
                    orow[co] += xv * wrow[co];
                }
            }
        }
    }
    Tensor::new_unchecked(vec![t_out, cout], out)
}

pub(crate) fn vjp_conv1d(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    g: &Tensor,
    needs: [bool; 2],
) -> [Option<Tensor>; 2] {
    let (t_in, cin) = x.dims2().unwrap();
    let k = w.shape()[0];
    let cout = w.shape()[2];
    let t_out = g.shape()[0];
    let mut dx = needs[0].then(|| vec![0.0; t_in * cin]);
    let mut dw = needs[1].then(|| vec![0.0; k * cin * cout]);
    for t in 0..t_out {
        let grow = &g.data()[t * cout..(t + 1) * cout];
        for kk in 0..k {
            let src = (t * stride + kk) as isize - pad as isize;
            if src < 0 || src >= t_in as isize {
                continue;
            }
            let s = src as usize;
            for ci in 0..cin {
                let wrow = &w.data()[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                let gdot: f64 = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                if let Some(dx) = dx.as_mut() {
                    dx[s * cin + ci] += gdot;
                }
                if let Some(dw) = dw.as_mut() {
                    let xv = x.data()[s * cin + ci];
                    if xv != 0.0 {
                        let drow = &mut dw[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                        for co in 0..cout {
                            drow[co] += xv * grow[co];
                        }
                    }
                }
            }
        }
    }
    [
        dx.map(|d| Tensor::new_unchecked(vec![t_in, cin], d)),
        dw.map(|d| Tensor::new_unchecked(w.shape().to_vec(), d)),
    ]
}

/// Transposed temporal convolution; the exact adjoint of [`conv1d`] plus
/// optional extra output frames via `out_pad`.
pub(crate) fn conv_t1d(x: &Tensor, w: &Tensor, stride: usize, pad: usize, out_pad: usize) -> Tensor {
    let (t_in, cin) = x.dims2().unwrap();
    let k = w.shape()[0];
    let cout = w.shape()[2];
    let t_out = conv_t1d_out_len(t_in, k, stride, pad, out_pad);
    let mut out = vec![0.0; t_out * cout];
    for t in 0..t_in {
        let xrow = &x.data()[t * cin..(t + 1) * cin];
        for kk in 0..k {
            let dst = (t * stride + kk) as isize - pad as isize;
            if dst < 0 || dst >= t_out as isize {
                continue;
            }
            let orow = &mut out[dst as usize * cout..(dst as usize + 1) * cout];
            for ci in 0..cin {
                let xv = xrow[ci];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w.data()[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                for co in 0..cout {
                    orow[co] += xv * wrow[co];
                }
            }
        }
    }
    Tensor::new_unchecked(vec![t_out, cout], out)
}

pub(crate) fn vjp_conv_t1d(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    g: &Tensor,
    needs: [bool; 2],
) -> [Option<Tensor>; 2] {
    let (t_in, cin) = x.dims2().unwrap();
    let k = w.shape()[0];
    let cout = w.shape()[2];
    let t_out = g.shape()[0];
    let mut dx = needs[0].then(|| vec![0.0; t_in * cin]);
    let mut dw = needs[1].then(|| vec![0.0; k * cin * cout]);
    for t in 0..t_in {
        for kk in 0..k {
            let dst = (t * stride + kk) as isize - pad as isize;
            if dst < 0 || dst >= t_out as isize {
                continue;
            }
            let grow = &g.data()[dst as usize * cout..(dst as usize + 1) * cout];
            for ci in 0..cin {
                let wrow = &w.data()[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                let gdot: f64 = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                if let Some(dx) = dx.as_mut() {
                    dx[t * cin + ci] += gdot;
                }
                if let Some(dw) = dw.as_mut() {
                    let xv = x.data()[t * cin + ci];
                    if xv != 0.0 {
                        let drow = &mut dw[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                        for co in 0..cout {
                            drow[co] += xv * grow[co];
                        }
                    }
                }
            }
        }
    }
    [
        dx.map(|d| Tensor::new_unchecked(vec![t_in, cin], d)),
        dw.map(|d| Tensor::new_unchecked(w.shape().to_vec(), d)),
    ]
}

// ── Weighted rotation about a pivot ─────────────────────────────────────────

pub(crate) fn skew(v: [f64; 3]) -> [[f64; 3]; 3] {
    [
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Axis-angle rotation matrix, with a Taylor fallback below [`SMALL_ANGLE`].
pub fn rotation_matrix(theta: [f64; 3]) -> [[f64; 3]; 3] {
    let alpha = (theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]).sqrt();
    let k = skew(theta);
    let k2 = mat_mul3(&k, &k);
    let (c1, c2) = if alpha < SMALL_ANGLE {
        // sin(a)/a and (1-cos(a))/a^2 expanded around zero.
        (1.0 - alpha * alpha / 6.0, 0.5 - alpha * alpha / 24.0)
    } else {
        (alpha.sin() / alpha, (1.0 - alpha.cos()) / (alpha * alpha))
    };
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (i == j) as u8 as f64 + c1 * k[i][j] + c2 * k2[i][j];
        }
    }
    r
}

/// Derivatives of the rotation matrix w.r.t. each axis-angle component.
fn rotation_matrix_grads(theta: [f64; 3], r: &[[f64; 3]; 3]) -> [[[f64; 3]; 3]; 3] {
    let alpha2 = theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2];
    let mut out = [[[0.0; 3]; 3]; 3];
    if alpha2.sqrt() < SMALL_ANGLE {
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            out[i] = skew(e);
        }
        return out;
    }
    let k = skew(theta);
    for i in 0..3 {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        // (I - R) e_i
        let re = mat_vec(r, e);
        let ime = [e[0] - re[0], e[1] - re[1], e[2] - re[2]];
        let cross = [
            theta[1] * ime[2] - theta[2] * ime[1],
            theta[2] * ime[0] - theta[0] * ime[2],
            theta[0] * ime[1] - theta[1] * ime[0],
        ];
        let sc = skew(cross);
        let mut m = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] = (theta[i] * k[a][b] + sc[a][b]) / alpha2;
            }
        }
        out[i] = mat_mul3(&m, r);
    }
    out
}

/// Per-point blend toward a rotation about `center`:
/// `out_i = p_i + w_i * (R (p_i - c) + c - p_i)`.
pub(crate) fn jaw_rotate(points: &Tensor, theta: &Tensor, center: [f64; 3], weights: &[f64]) -> Tensor {
    let n = points.shape()[0];
    let r = rotation_matrix([theta.data()[0], theta.data()[1], theta.data()[2]]);
    let mut out = vec![0.0; n * 3];
    for i in 0..n {
        let p = [
            points.data()[i * 3],
            points.data()[i * 3 + 1],
            points.data()[i * 3 + 2],
        ];
        let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
        let rd = mat_vec(&r, d);
        let w = weights[i];
        for a in 0..3 {
            out[i * 3 + a] = p[a] + w * (rd[a] + center[a] - p[a]);
        }
    }
    Tensor::new_unchecked(vec![n, 3], out)
}

pub(crate) fn vjp_jaw_rotate(
    points: &Tensor,
    theta: &Tensor,
    center: [f64; 3],
    weights: &[f64],
    g: &Tensor,
    needs: [bool; 2],
) -> [Option<Tensor>; 2] {
    let n = points.shape()[0];
    let th = [theta.data()[0], theta.data()[1], theta.data()[2]];
    let r = rotation_matrix(th);
    let dr = rotation_matrix_grads(th, &r);
    let mut dp = needs[0].then(|| vec![0.0; n * 3]);
    let mut dth = needs[1].then(|| [0.0; 3]);
    for i in 0..n {
        let w = weights[i];
        let grad = [g.data()[i * 3], g.data()[i * 3 + 1], g.data()[i * 3 + 2]];
        if let Some(dp) = dp.as_mut() {
            // d out_i / d p_i = (1 - w) I + w R, applied transposed to grad.
            for a in 0..3 {
                let mut acc = (1.0 - w) * grad[a];
                for b in 0..3 {
                    acc += w * r[b][a] * grad[b];
                }
                dp[i * 3 + a] = acc;
            }
        }
        if let Some(dth) = dth.as_mut() {
            if w != 0.0 {
                let p = [
                    points.data()[i * 3],
                    points.data()[i * 3 + 1],
                    points.data()[i * 3 + 2],
                ];
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                for (k, dr_k) in dr.iter().enumerate() {
                    let md = mat_vec(dr_k, d);
                    dth[k] += w * (grad[0] * md[0] + grad[1] * md[1] + grad[2] * md[2]);
                }
            }
        }
    }
    [
        dp.map(|d| Tensor::new_unchecked(vec![n, 3], d)),
        dth.map(|d| Tensor::new_unchecked(vec![3], d.to_vec())),
    ]
}
