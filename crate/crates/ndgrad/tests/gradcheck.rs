//! Finite-difference verification for every differentiable op, plus forward
//! value spot checks against hand-computed results.

use approx::assert_relative_eq;
use ndgrad::check::FdConfig;
use ndgrad::{battery, nn, rotation_matrix, Graph, Tensor};

#[test]
fn every_op_passes_central_difference_checks() {
    let cfg = FdConfig::default();
    let reports = battery::op_gradient_battery(20, &cfg);
    assert!(reports.len() >= 30, "battery shrank to {} ops", reports.len());
    for (name, report) in &reports {
        assert!(
            report.max_rel_err < cfg.tol,
            "{name}: max rel err {:.3e} over {} probes, worst {:?}",
            report.max_rel_err,
            report.probes,
            report.worst
        );
        assert!(report.probes >= 20, "{name}: only {} probes", report.probes);
    }
}

#[test]
fn matmul_matches_hand_computation() {
    let mut g = Graph::new();
    let a = g.input(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let b = g.input(Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
}

#[test]
fn conv1d_identity_kernel_with_stride_one_is_identity() {
    // Kernel that only passes through the center tap.
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(&[5, 1], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap());
    let w = g.input(Tensor::from_vec(&[3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap());
    let y = g.conv1d(x, w, 1, 1).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

#[test]
fn conv_lengths_halve_and_double_with_stride_two() {
    let mut g = Graph::new();
    for t in [8usize, 16, 32] {
        let x = g.input(Tensor::zeros(&[t, 2]));
        let w = g.input(Tensor::zeros(&[3, 2, 4]));
        let y = g.conv1d(x, w, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[t / 2, 4]);
        let wt = g.input(Tensor::zeros(&[3, 4, 2]));
        let z = g.conv_transpose1d(y, wt, 2, 1, 1).unwrap();
        assert_eq!(g.value(z).shape(), &[t, 2]);
    }
}

#[test]
fn conv_transpose_is_the_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> when both share weights and geometry.
    use rand::SeedableRng;
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let x = Tensor::rand_uniform(&[10, 2], -1.0, 1.0, &mut r);
        let w = Tensor::rand_uniform(&[3, 2, 3], -1.0, 1.0, &mut r);
        let y = Tensor::rand_uniform(&[5, 3], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (xn, wn, yn) = (g.input(x.clone()), g.input(w.clone()), g.input(y.clone()));
        let cx = g.conv1d(xn, wn, 2, 1).unwrap();
        let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        // Adjoint direction: same weights, swapped in/out channels handled by
        // the shared [K, Cin, Cout] layout read in transpose.
        let mut g2 = Graph::new();
        let (yn2, wn2) = (g2.input(y), g2.input(w));
        let wt = {
            // [3, 2, 3] reinterpreted: conv_t consumes [K, Cin=3?, ...]; keep
            // layout by transposing channel blocks per tap.
            let mut data = vec![0.0; 3 * 3 * 2];
            let wd = g.value(wn).data();
            for k in 0..3 {
                for ci in 0..2 {
                    for co in 0..3 {
                        data[(k * 3 + co) * 2 + ci] = wd[(k * 2 + ci) * 3 + co];
                    }
                }
            }
            g2.input(Tensor::from_vec(&[3, 3, 2], data).unwrap())
        };
        let cty = g2.conv_transpose1d(yn2, wt, 2, 1, 1).unwrap();
        let rhs: f64 = g2.value(cty).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 5.0]).unwrap());
    let y = g.softmax(x).unwrap();
    let d = g.value(y).data();
    for row in d.chunks(3) {
        assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(row.iter().all(|v| *v > 0.0));
    }
    // Hand value: softmax([1,2,3])[2] = e^3 / (e^1 + e^2 + e^3).
    let z = (1f64.exp() + 2f64.exp() + 3f64.exp()).recip() * 3f64.exp();
    assert_relative_eq!(d[2], z, epsilon = 1e-12);
}

#[test]
fn layer_norm_standardizes_each_row() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap());
    let gamma = g.input(Tensor::filled(&[4], 1.0));
    let beta = g.input(Tensor::zeros(&[4]));
    let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
    for row in g.value(y).data().chunks(4) {
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert_relative_eq!(mean, 0.0, epsilon = 1e-10);
        assert_relative_eq!(var, 1.0, epsilon = 1e-6);
    }
}

#[test]
fn gelu_reference_values() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(&[3], vec![0.0, 3.0, -3.0]).unwrap());
    let y = g.gelu(x).unwrap();
    let d = g.value(y).data();
    assert_eq!(d[0], 0.0);
    assert!((d[1] - 3.0).abs() < 1e-2, "gelu(3) should be close to 3, got {}", d[1]);
    assert!(d[2].abs() < 1e-2, "gelu(-3) should be close to 0, got {}", d[2]);
}

#[test]
fn rotation_matrix_is_orthonormal_and_matches_small_angles() {
    let r = rotation_matrix([0.3, -0.2, 0.5]);
    // R^T R = I.
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            assert_relative_eq!(dot, (i == j) as u8 as f64, epsilon = 1e-12);
        }
    }
    // Tiny angle continuity across the Taylor guard.
    let eps = 5e-9;
    let ra = rotation_matrix([eps, 0.0, 0.0]);
    let rb = rotation_matrix([2e-8, 0.0, 0.0]);
    for i in 0..3 {
        for j in 0..3 {
            assert!((ra[i][j] - rb[i][j]).abs() < 1e-7);
        }
    }
    assert_eq!(rotation_matrix([0.0; 3]), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
}

#[test]
fn attention_with_negative_infinity_like_bias_ignores_masked_frames() {
    // A huge negative bias on one column removes that frame's influence.
    let mut g = Graph::new();
    let q = g.input(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let k = g.input(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let v = g.input(Tensor::from_vec(&[2, 2], vec![5.0, 5.0, -7.0, -7.0]).unwrap());
    let bias = g.constant(Tensor::from_vec(&[2, 2], vec![0.0, -1e9, 0.0, -1e9]).unwrap());
    let y = nn::attention(&mut g, q, k, v, bias).unwrap();
    for row in g.value(y).data().chunks(2) {
        assert_relative_eq!(row[0], 5.0, epsilon = 1e-6);
    }
}

#[test]
fn graphs_are_bitwise_deterministic_across_builds() {
    use rand::SeedableRng;
    let build = || {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let mut g = Graph::new();
        let x = g.input(Tensor::rand_uniform(&[6, 4], -1.0, 1.0, &mut r));
        let w = g.input(Tensor::rand_uniform(&[4, 4], -1.0, 1.0, &mut r));
        let h = g.matmul(x, w).unwrap();
        let a = g.gelu(h).unwrap();
        let loss = g.mean_all(a).unwrap();
        let grads = g.backward(loss).unwrap();
        (
            g.value(loss).data().to_vec(),
            grads.get(x).unwrap().data().to_vec(),
        )
    };
    let (l1, g1) = build();
    let (l2, g2) = build();
    assert_eq!(l1, l2);
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}
