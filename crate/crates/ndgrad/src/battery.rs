//! Randomized finite-difference battery covering every differentiable op.
//!
//! Exposed as library code so integration suites can rerun the full battery
//! and assert on the aggregate report.

use crate::check::{check_gradients, FdConfig, FdReport};
use crate::error::NdError;
use crate::graph::{Graph, NodeId};
use crate::nn;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reduces an arbitrary op output to a scalar with fixed random weights so
/// every output coordinate contributes an independent gradient signal.
fn weighted_sum(g: &mut Graph, y: NodeId, seed: u64) -> Result<NodeId, NdError> {
    let shape = g.value(y).shape().to_vec();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::rand_uniform(&shape, -1.0, 1.0, &mut r));
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, r)
}

/// Uniform values bounded away from zero, for ops with a kink or pole there.
fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::rand_uniform(shape, 0.2, 1.5, r);
    for v in t.data_mut() {
        if r.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

type MakeInputs = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
type ApplyOp = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId, NdError>>;

struct OpCase {
    name: &'static str,
    make: MakeInputs,
    apply: ApplyOp,
}

fn cases() -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    let mut push = |name: &'static str, make: MakeInputs, apply: ApplyOp| {
        cases.push(OpCase { name, make, apply });
    };

    let shape2 = |r: &mut ChaCha8Rng| vec![r.gen_range(2..6), r.gen_range(2..7)];

    push(
        "add",
        Box::new(move |r| {
            let s = shape2(r);
            vec![uniform(&s, -2.0, 2.0, r), uniform(&s, -2.0, 2.0, r)]
        }),
        Box::new(|g, ids| g.add(ids[0], ids[1])),
    );
    push(
        "sub",
        Box::new(move |r| {
            let s = shape2(r);
            vec![uniform(&s, -2.0, 2.0, r), uniform(&s, -2.0, 2.0, r)]
        }),
        Box::new(|g, ids| g.sub(ids[0], ids[1])),
    );
    push(
        "mul",
        Box::new(move |r| {
            let s = shape2(r);
            vec![uniform(&s, -2.0, 2.0, r), uniform(&s, -2.0, 2.0, r)]
        }),
        Box::new(|g, ids| g.mul(ids[0], ids[1])),
    );
    push(
        "div",
        Box::new(move |r| {
            let s = shape2(r);
            vec![uniform(&s, -2.0, 2.0, r), away_from_zero(&s, r)]
        }),
        Box::new(|g, ids| g.div(ids[0], ids[1])),
    );
    push(
        "add_row",
        Box::new(move |r| {
            let s = shape2(r);
            let d = s[1];
            vec![uniform(&s, -2.0, 2.0, r), uniform(&[d], -2.0, 2.0, r)]
        }),
        Box::new(|g, ids| g.add_row(ids[0], ids[1])),
    );
    push(
        "sub_row",
        Box::new(move |r| {
            let s = shape2(r);
            let d = s[1];
            vec![uniform(&s, -2.0, 2.0, r), uniform(&[d], -2.0, 2.0, r)]
        }),
        Box::new(|g, ids| g.sub_row(ids[0], ids[1])),
    );
    push(
        "mul_scalar_node",
        Box::new(move |r| {
            let s = shape2(r);
            vec![uniform(&s, -2.0, 2.0, r), uniform(&[1], -2.0, 2.0, r)]
        }),
        Box::new(|g, ids| g.mul_scalar_node(ids[0], ids[1])),
    );
    push(
        "neg",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.neg(ids[0])),
    );
    push(
        "exp",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.exp(ids[0])),
    );
    push(
        "ln",
        Box::new(move |r| vec![uniform(&shape2(r), 0.1, 3.0, r)]),
        Box::new(|g, ids| g.ln(ids[0])),
    );
    push(
        "sqrt",
        Box::new(move |r| vec![uniform(&shape2(r), 0.1, 3.0, r)]),
        Box::new(|g, ids| g.sqrt(ids[0])),
    );
    push(
        "tanh",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.tanh(ids[0])),
    );
    push(
        "relu",
        Box::new(move |r| vec![away_from_zero(&shape2(r), r)]),
        Box::new(|g, ids| g.relu(ids[0])),
    );
    push(
        "gelu",
        Box::new(move |r| vec![uniform(&shape2(r), -3.0, 3.0, r)]),
        Box::new(|g, ids| g.gelu(ids[0])),
    );
    push(
        "recip",
        Box::new(move |r| vec![away_from_zero(&shape2(r), r)]),
        Box::new(|g, ids| g.recip(ids[0])),
    );
    push(
        "scale",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.scale(ids[0], -1.7)),
    );
    push(
        "add_const",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.add_const(ids[0], 0.42)),
    );
    push(
        "matmul",
        Box::new(move |r| {
            let (m, k, n) = (r.gen_range(2..5), r.gen_range(2..5), r.gen_range(2..5));
            vec![uniform(&[m, k], -1.5, 1.5, r), uniform(&[k, n], -1.5, 1.5, r)]
        }),
        Box::new(|g, ids| g.matmul(ids[0], ids[1])),
    );
    push(
        "transpose",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.transpose(ids[0])),
    );
    push(
        "reshape",
        Box::new(move |r| vec![uniform(&[r.gen_range(2..5), 6], -2.0, 2.0, r)]),
        Box::new(|g, ids| {
            let n = g.value(ids[0]).numel();
            g.reshape(ids[0], &[n / 3, 3])
        }),
    );
    push(
        "concat_cols",
        Box::new(move |r| {
            let n = r.gen_range(2..5);
            vec![
                uniform(&[n, r.gen_range(1..4)], -2.0, 2.0, r),
                uniform(&[n, r.gen_range(1..4)], -2.0, 2.0, r),
                uniform(&[n, r.gen_range(1..4)], -2.0, 2.0, r),
            ]
        }),
        Box::new(|g, ids| g.concat_cols(ids)),
    );
    push(
        "slice_cols",
        Box::new(move |r| vec![uniform(&[r.gen_range(2..5), 6], -2.0, 2.0, r)]),
        Box::new(|g, ids| g.slice_cols(ids[0], 1, 3)),
    );
    push(
        "gather_rows",
        Box::new(move |r| vec![uniform(&[5, r.gen_range(2..5)], -2.0, 2.0, r)]),
        // Repeated row checks the scatter-add accumulation.
        Box::new(|g, ids| g.gather_rows(ids[0], &[0, 2, 2, 4])),
    );
    push(
        "sum_all",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.sum_all(ids[0])),
    );
    push(
        "mean_all",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.mean_all(ids[0])),
    );
    push(
        "sum_axis1",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.sum_axis1(ids[0])),
    );
    push(
        "mean_axis0",
        Box::new(move |r| vec![uniform(&shape2(r), -2.0, 2.0, r)]),
        Box::new(|g, ids| g.mean_axis0(ids[0])),
    );
    push(
        "layer_norm",
        Box::new(move |r| {
            let s = shape2(r);
            let d = s[1];
            vec![
                uniform(&s, -2.0, 2.0, r),
                uniform(&[d], 0.5, 1.5, r),
                uniform(&[d], -0.5, 0.5, r),
            ]
        }),
        Box::new(|g, ids| g.layer_norm(ids[0], ids[1], ids[2], 1e-5)),
    );
    push(
        "softmax",
        Box::new(move |r| vec![uniform(&shape2(r), -3.0, 3.0, r)]),
        Box::new(|g, ids| g.softmax(ids[0])),
    );
    push(
        "cross_entropy_logits",
        Box::new(move |r| vec![uniform(&[4, 5], -2.0, 2.0, r)]),
        Box::new(|g, ids| g.cross_entropy_logits(ids[0], &[3, 0, 4, 1])),
    );
    push(
        "conv1d",
        Box::new(move |r| {
            let t = r.gen_range(6..12);
            let (cin, cout) = (r.gen_range(1..4), r.gen_range(1..4));
            vec![uniform(&[t, cin], -1.5, 1.5, r), uniform(&[3, cin, cout], -1.0, 1.0, r)]
        }),
        Box::new(|g, ids| g.conv1d(ids[0], ids[1], 2, 1)),
    );
    push(
        "conv1d_stride1",
        Box::new(move |r| {
            let t = r.gen_range(5..10);
            let (cin, cout) = (r.gen_range(1..4), r.gen_range(1..4));
            vec![uniform(&[t, cin], -1.5, 1.5, r), uniform(&[3, cin, cout], -1.0, 1.0, r)]
        }),
        Box::new(|g, ids| g.conv1d(ids[0], ids[1], 1, 1)),
    );
    push(
        "conv_transpose1d",
        Box::new(move |r| {
            let t = r.gen_range(3..7);
            let (cin, cout) = (r.gen_range(1..4), r.gen_range(1..4));
            vec![uniform(&[t, cin], -1.5, 1.5, r), uniform(&[3, cin, cout], -1.0, 1.0, r)]
        }),
        Box::new(|g, ids| g.conv_transpose1d(ids[0], ids[1], 2, 1, 1)),
    );
    push(
        "jaw_rotate",
        Box::new(move |r| {
            let n = r.gen_range(4..9);
            vec![uniform(&[n, 3], -1.0, 1.0, r), uniform(&[3], -0.6, 0.6, r)]
        }),
        Box::new(|g, ids| {
            let n = g.value(ids[0]).shape()[0];
            let weights: Vec<f64> = (0..n).map(|i| (i % 3) as f64 / 2.0).collect();
            g.jaw_rotate(ids[0], ids[1], [0.1, -0.2, 0.3], &weights)
        }),
    );
    push(
        "jaw_rotate_zero_angle",
        Box::new(move |r| {
            let n = r.gen_range(4..9);
            vec![uniform(&[n, 3], -1.0, 1.0, r), Tensor::zeros(&[3])]
        }),
        Box::new(|g, ids| {
            let n = g.value(ids[0]).shape()[0];
            let weights: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            g.jaw_rotate(ids[0], ids[1], [0.0, 0.1, 0.0], &weights)
        }),
    );
    push(
        "attention",
        Box::new(move |r| {
            let (t, dk, dv) = (r.gen_range(3..6), r.gen_range(2..5), r.gen_range(2..5));
            vec![
                uniform(&[t, dk], -1.0, 1.0, r),
                uniform(&[t, dk], -1.0, 1.0, r),
                uniform(&[t, dv], -1.0, 1.0, r),
            ]
        }),
        Box::new(|g, ids| {
            let t = g.value(ids[0]).shape()[0];
            let bias = g.constant(nn::alibi_bias(1, t).pop().unwrap());
            nn::attention(g, ids[0], ids[1], ids[2], bias)
        }),
    );
    push(
        "encoder_layer",
        Box::new(move |r| {
            let t = r.gen_range(3..6);
            let d = 8;
            let ff = 12;
            vec![
                uniform(&[t, d], -1.0, 1.0, r),
                uniform(&[d, d], -0.5, 0.5, r),
                uniform(&[d, d], -0.5, 0.5, r),
                uniform(&[d, d], -0.5, 0.5, r),
                uniform(&[d, d], -0.5, 0.5, r),
                uniform(&[d], 0.5, 1.5, r),
                uniform(&[d], -0.2, 0.2, r),
                uniform(&[d, ff], -0.5, 0.5, r),
                uniform(&[ff], -0.2, 0.2, r),
                uniform(&[ff, d], -0.5, 0.5, r),
                uniform(&[d], -0.2, 0.2, r),
                uniform(&[d], 0.5, 1.5, r),
                uniform(&[d], -0.2, 0.2, r),
            ]
        }),
        Box::new(|g, ids| {
            let t = g.value(ids[0]).shape()[0];
            let biases: Vec<NodeId> = nn::alibi_bias(2, t)
                .into_iter()
                .map(|b| g.constant(b))
                .collect();
            let p = nn::EncoderLayerNodes {
                wq: ids[1],
                wk: ids[2],
                wv: ids[3],
                wo: ids[4],
                ln1_gamma: ids[5],
                ln1_beta: ids[6],
                ff_w1: ids[7],
                ff_b1: ids[8],
                ff_w2: ids[9],
                ff_b2: ids[10],
                ln2_gamma: ids[11],
                ln2_beta: ids[12],
            };
            nn::encoder_layer(g, ids[0], &p, &biases, 2, 1e-5)
        }),
    );
    cases
}

/// Runs `instances_per_op` random finite-difference instances for every
/// differentiable op and composite. Returns `(op name, worst report)` pairs.
pub fn op_gradient_battery(
    instances_per_op: usize,
    cfg: &FdConfig,
) -> Vec<(&'static str, FdReport)> {
    let mut out = Vec::new();
    for case in cases() {
        let mut worst = FdReport {
            max_rel_err: 0.0,
            probes: 0,
            worst: None,
        };
        for inst in 0..instances_per_op {
            let mut r = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (inst as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let inputs = (case.make)(&mut r);
            let wseed = cfg.seed.wrapping_add(inst as u64).wrapping_mul(31);
            let report = check_gradients(&inputs, cfg, |g, ids| {
                let y = (case.apply)(g, ids)?;
                weighted_sum(g, y, wseed)
            })
            .unwrap_or_else(|e| panic!("{}: build failed: {e}", case.name));
            worst.probes += report.probes;
            if report.max_rel_err > worst.max_rel_err {
                worst.max_rel_err = report.max_rel_err;
                worst.worst = report.worst;
            }
        }
        out.push((case.name, worst));
    }
    out
}
