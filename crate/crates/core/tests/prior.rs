use std::sync::OnceLock;
use std::time::Instant;

use mimic_core::face::{bind_face, generate_assets, synthesize_node, AssetSpec, FaceAssets, MOTION_DIM};
use mimic_core::prior::{
    decode, decoder_nodes, encode, encoder_nodes, kl_loss, kl_node, pad_motion, rec_loss,
    reparameterize, train_prior, MotionPrior, PriorHyper, PriorLossWeights, PriorTrainConfig,
};
use mimic_core::seeds;
use mimic_core::synthdata::{generate_dataset, Dataset, DatasetSpec};
use ndgrad::check::{assert_gradients, FdConfig};
use ndgrad::{Graph, NdError, Tensor};

const SEED: u64 = 7;

fn fixture() -> &'static (FaceAssets, Dataset) {
    static FIXTURE: OnceLock<(FaceAssets, Dataset)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let assets = generate_assets(&AssetSpec::default());
        let data = generate_dataset(&assets, &DatasetSpec::default(), SEED).unwrap();
        (assets, data)
    })
}

fn model() -> &'static MotionPrior {
    static MODEL: OnceLock<MotionPrior> = OnceLock::new();
    MODEL.get_or_init(|| MotionPrior::seeded(PriorHyper::default(), 5).unwrap())
}

fn motion(t: usize, std: f64, seed: u64) -> Tensor {
    Tensor::randn(&[t, MOTION_DIM], std, &mut seeds::rng(seed))
}

fn to_nd(e: mimic_core::CoreError) -> NdError {
    NdError::Invalid { op: "prior", msg: e.to_string() }
}

#[test]
fn hyperparameters_are_validated() {
    let bad = |h: PriorHyper| MotionPrior::seeded(h, 0).unwrap_err().to_string();
    let base = PriorHyper::default();
    assert!(bad(PriorHyper { q: 4, ..base.clone() }).contains("stride-2 stages"));
    assert!(bad(PriorHyper { latent: 64, ..base.clone() }).contains("must match attention width"));
    assert!(bad(PriorHyper { kernel: 4, ..base.clone() }).contains("must be odd"));
    assert!(bad(PriorHyper { heads: 3, ..base.clone() }).contains("not divisible"));
    assert!(bad(PriorHyper { ff: 0, ..base }).contains("feed-forward"));
}

#[test]
fn encoder_lengths_follow_the_compression_factor() {
    let m = model();
    for (t, latent_frames) in [(8usize, 1usize), (32, 4), (64, 8)] {
        let (mu, sigma) = encode(m, &motion(t, 0.05, 11)).unwrap();
        assert_eq!(mu.shape(), &[latent_frames, m.hyper.latent]);
        assert_eq!(sigma.shape(), &[latent_frames, m.hyper.latent]);
        assert!(sigma.data().iter().all(|s| *s > 0.0));
    }
    // Lengths off the stride grid are padded up, never truncated.
    let (mu, _) = encode(m, &motion(12, 0.05, 12)).unwrap();
    assert_eq!(mu.shape(), &[2, m.hyper.latent]);

    let err = encode(m, &motion(7, 0.05, 13)).unwrap_err().to_string();
    assert!(err.contains("cannot fill one latent frame"), "{err}");
    let err = encode(m, &Tensor::zeros(&[8, 10])).unwrap_err().to_string();
    assert!(err.contains("motion must be"), "{err}");

    // The graph-level encoder refuses to pad silently.
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let input = g.constant(motion(12, 0.05, 14));
    let err = encoder_nodes(&mut g, &bound, input).unwrap_err().to_string();
    assert!(err.contains("pad upstream"), "{err}");
}

#[test]
fn padding_repeats_the_last_frame() {
    let short = motion(5, 0.1, 21);
    let padded = pad_motion(&short, 8).unwrap();
    assert_eq!(padded.shape(), &[8, MOTION_DIM]);
    assert_eq!(
        &padded.data()[..5 * MOTION_DIM],
        short.data(),
        "existing frames must be untouched"
    );
    for t in 5..8 {
        assert_eq!(
            &padded.data()[t * MOTION_DIM..(t + 1) * MOTION_DIM],
            &short.data()[4 * MOTION_DIM..],
            "padding frame {t} must copy the final frame"
        );
    }

    let aligned = motion(16, 0.1, 22);
    let same = pad_motion(&aligned, 8).unwrap();
    assert_eq!(same.shape(), aligned.shape());
    assert_eq!(same.data(), aligned.data());

    assert!(pad_motion(&Tensor::zeros(&[0, MOTION_DIM]), 8)
        .unwrap_err()
        .to_string()
        .contains("empty motion track"));
    assert!(pad_motion(&Tensor::zeros(&[8]), 8).unwrap_err().to_string().contains("2-D"));
}

#[test]
fn reparameterization_is_exact_at_the_landmarks() {
    let mu = Tensor::randn(&[3, 4], 1.0, &mut seeds::rng(31));
    let zeros = Tensor::zeros(&[3, 4]);
    let z = reparameterize(&mu, &zeros, 99).unwrap();
    assert_eq!(z.data(), mu.data(), "zero spread must return the mean bitwise");

    // Unit spread around a zero mean is the raw seeded draw.
    let ones = Tensor::from_vec(&[3, 4], vec![1.0; 12]).unwrap();
    let z = reparameterize(&Tensor::zeros(&[3, 4]), &ones, 123).unwrap();
    let raw = Tensor::randn(&[3, 4], 1.0, &mut seeds::rng(123));
    assert_eq!(z.data(), raw.data());

    // Same seed, same draw; different seed, different draw.
    let a = reparameterize(&mu, &ones, 5).unwrap();
    let b = reparameterize(&mu, &ones, 5).unwrap();
    let c = reparameterize(&mu, &ones, 6).unwrap();
    assert_eq!(a.data(), b.data());
    assert!(a.max_abs_diff(&c) > 1e-6);

    let err = reparameterize(&mu, &Tensor::zeros(&[4, 3]), 0).unwrap_err().to_string();
    assert!(err.contains("differ"), "{err}");
}

#[test]
fn reparameterization_moments_match_the_target_gaussian() {
    let mu_v = [1.0, -2.0, 1.5, 3.0];
    let sg_v = [0.5, 1.0, 0.25, 0.75];
    let mu = Tensor::from_vec(&[1, 4], mu_v.to_vec()).unwrap();
    let sigma = Tensor::from_vec(&[1, 4], sg_v.to_vec()).unwrap();
    let draws = 100_000u64;
    let mut sum = [0.0f64; 4];
    let mut sumsq = [0.0f64; 4];
    for k in 0..draws {
        let z = reparameterize(&mu, &sigma, 1_000 + k).unwrap();
        for (i, v) in z.data().iter().enumerate() {
            sum[i] += v;
            sumsq[i] += v * v;
        }
    }
    let n = draws as f64;
    for i in 0..4 {
        let mean = sum[i] / n;
        let std = (sumsq[i] / n - mean * mean).sqrt();
        assert!(
            (mean - mu_v[i]).abs() <= 0.01 * mu_v[i].abs(),
            "coordinate {i}: empirical mean {mean} vs {}",
            mu_v[i]
        );
        assert!(
            (std - sg_v[i]).abs() <= 0.01 * sg_v[i],
            "coordinate {i}: empirical spread {std} vs {}",
            sg_v[i]
        );
    }
}

#[test]
fn decoding_inverts_the_length_mapping() {
    let m = model();
    for t in [8usize, 32, 64] {
        let (mu, _) = encode(m, &motion(t, 0.05, 41)).unwrap();
        let back = decode(m, &mu).unwrap();
        assert_eq!(back.shape(), &[t, MOTION_DIM]);
        assert!(back.is_finite());
    }
    let z = Tensor::randn(&[4, m.hyper.latent], 1.0, &mut seeds::rng(42));
    assert_eq!(decode(m, &z).unwrap().shape(), &[32, MOTION_DIM]);

    let err = decode(m, &Tensor::zeros(&[0, m.hyper.latent])).unwrap_err().to_string();
    assert!(err.contains("latents must be"), "{err}");
    let err = decode(m, &Tensor::zeros(&[4, 64])).unwrap_err().to_string();
    assert!(err.contains("latents must be"), "{err}");
}

#[test]
fn one_decoder_call_covers_a_whole_sequence() {
    let m = MotionPrior::seeded(PriorHyper::default(), 5).unwrap();
    assert_eq!(m.decode_calls(), 0);

    let long = motion(256, 0.05, 51);
    let (mu, _) = encode(&m, &long).unwrap();
    assert_eq!(m.decode_calls(), 0, "encoding must not touch the decoder");
    let back = decode(&m, &mu).unwrap();
    assert_eq!(back.shape(), &[256, MOTION_DIM]);
    assert_eq!(m.decode_calls(), 1, "a 256-frame sequence is one decoder invocation");

    decode(&m, &mu).unwrap();
    assert_eq!(m.decode_calls(), 2);

    // Bindings of the same model share the counter; clones start fresh.
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let z = g.constant(Tensor::randn(&[2, m.hyper.latent], 1.0, &mut seeds::rng(52)));
    decoder_nodes(&mut g, &bound, z).unwrap();
    assert_eq!(m.decode_calls(), 3);
    let fresh = m.clone();
    assert_eq!(fresh.decode_calls(), 0);
    assert_eq!(m.decode_calls(), 3);
}

#[test]
fn divergence_hits_the_landmarks() {
    // Standard normal against itself vanishes exactly.
    let mu = Tensor::zeros(&[3, 5]);
    let sigma = Tensor::from_vec(&[3, 5], vec![1.0; 15]).unwrap();
    assert_eq!(kl_loss(&mu, &sigma).unwrap(), 0.0);

    // One dimension, unit shift: 0.5 * (1 + 1 - 0 - 1) = 0.5.
    let mu1 = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
    let sg1 = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
    assert_eq!(kl_loss(&mu1, &sg1).unwrap(), 0.5);

    // Any perturbation off the standard normal is positive.
    let near = Tensor::from_vec(&[1, 1], vec![1e-3]).unwrap();
    assert!(kl_loss(&near, &sg1).unwrap() > 0.0);
    for k in 0..20 {
        let mu = Tensor::randn(&[2, 7], 1.0, &mut seeds::rng(600 + k));
        let raw = Tensor::randn(&[2, 7], 0.5, &mut seeds::rng(700 + k));
        let sigma =
            Tensor::from_vec(&[2, 7], raw.data().iter().map(|x| x.exp()).collect()).unwrap();
        assert!(kl_loss(&mu, &sigma).unwrap() >= 0.0);
    }

    // Independent scalar recomputation, accumulated in reverse order.
    let mu = Tensor::randn(&[4, 7], 1.0, &mut seeds::rng(61));
    let raw = Tensor::randn(&[4, 7], 0.5, &mut seeds::rng(62));
    let sigma = Tensor::from_vec(&[4, 7], raw.data().iter().map(|x| x.exp()).collect()).unwrap();
    let got = kl_loss(&mu, &sigma).unwrap();
    let mut oracle = 0.0;
    for (m, s) in mu.data().iter().zip(sigma.data()).rev() {
        oracle += 0.5 * (s * s + m * m - (s * s).ln() - 1.0);
    }
    assert!((got - oracle).abs() <= 1e-9, "{got} vs {oracle}");

    // The graph node agrees with the plain form through the log-variance
    // parameterization.
    let mut g = Graph::new();
    let mu_n = g.constant(mu.clone());
    let logvar = Tensor::from_vec(
        &[4, 7],
        sigma.data().iter().map(|s| (s * s).ln()).collect(),
    )
    .unwrap();
    let lv_n = g.constant(logvar);
    let node = kl_node(&mut g, mu_n, lv_n).unwrap();
    assert!((g.value(node).item() - got).abs() <= 1e-9);

    let flat = Tensor::zeros(&[1, 1]);
    let err = kl_loss(&mu1, &flat).unwrap_err().to_string();
    assert!(err.contains("sigma must be positive"), "{err}");
    let neg = Tensor::from_vec(&[1, 1], vec![-1.0]).unwrap();
    assert!(kl_loss(&mu1, &neg).is_err());
    assert!(kl_loss(&mu1, &Tensor::zeros(&[2, 1])).unwrap_err().to_string().contains("differ"));
}

#[test]
fn reconstruction_error_is_vertex_space_mse() {
    let (assets, data) = fixture();
    let rec = &data.records[data.train[0]];
    let a = Tensor::from_vec(
        &[16, MOTION_DIM],
        rec.motion.data()[..16 * MOTION_DIM].to_vec(),
    )
    .unwrap();
    assert_eq!(rec_loss(assets, &rec.beta, &a, &a).unwrap(), 0.0);

    let mut b = a.clone();
    for t in 0..16 {
        b.data_mut()[t * MOTION_DIM + 3] += 0.05;
    }
    let got = rec_loss(assets, &rec.beta, &b, &a).unwrap();
    assert!(got > 0.0);

    // Oracle: average squared vertex displacement recomputed from the two
    // synthesized tracks, accumulated frame-last.
    let ma = assets.synthesize_sequence(&rec.beta, &a).unwrap();
    let mb = assets.synthesize_sequence(&rec.beta, &b).unwrap();
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in ma.iter().zip(&mb).rev() {
        for (p, q) in x.data().iter().zip(y.data()) {
            total += (p - q) * (p - q);
            count += 1;
        }
    }
    let oracle = total / count as f64;
    assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0), "{got} vs {oracle}");

    // Expression synthesis is linear, so doubling an expression-only
    // difference quadruples the error.
    let mut b2 = a.clone();
    for t in 0..16 {
        b2.data_mut()[t * MOTION_DIM + 3] += 0.10;
    }
    let got2 = rec_loss(assets, &rec.beta, &b2, &a).unwrap();
    assert!((got2 / got - 4.0).abs() <= 1e-9, "ratio {}", got2 / got);

    let short = Tensor::zeros(&[8, MOTION_DIM]);
    let err = rec_loss(assets, &rec.beta, &short, &a).unwrap_err().to_string();
    assert!(err.contains("motion shapes"), "{err}");
}

#[test]
fn the_encoder_attends_across_the_whole_sequence() {
    // The conv tower's receptive field for the first latent frame stops at
    // motion frame q - 1, so any sensitivity to later frames must flow
    // through the attention layer.
    let m = model();
    let a = motion(16, 0.1, 71);
    let mut b = a.clone();
    let tail = Tensor::randn(&[8, MOTION_DIM], 0.1, &mut seeds::rng(72));
    b.data_mut()[8 * MOTION_DIM..].copy_from_slice(tail.data());
    assert_eq!(&a.data()[..8 * MOTION_DIM], &b.data()[..8 * MOTION_DIM]);

    let (mu_a, _) = encode(m, &a).unwrap();
    let (mu_b, _) = encode(m, &b).unwrap();
    let row = m.hyper.latent;
    let first_diff = mu_a.data()[..row]
        .iter()
        .zip(&mu_b.data()[..row])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    assert!(
        first_diff > 1e-9,
        "first latent frame ignored the second half of the sequence (diff {first_diff:.3e})"
    );
}

#[test]
fn gradients_flow_through_the_whole_model() {
    let (assets, data) = fixture();
    let m = model();
    let rec = &data.records[data.train[1]];
    let input = Tensor::from_vec(
        &[16, MOTION_DIM],
        rec.motion.data()[..16 * MOTION_DIM].to_vec(),
    )
    .unwrap();
    let target = Tensor::from_vec(
        &[16, MOTION_DIM],
        rec.motion.data()[16 * MOTION_DIM..32 * MOTION_DIM].to_vec(),
    )
    .unwrap();
    let gt = assets.synthesize_sequence(&rec.beta, &target).unwrap();
    let noise = Tensor::randn(&[2, m.hyper.latent], 1.0, &mut seeds::rng(81));
    let beta = rec.beta.clone();

    assert_gradients(&[input], &FdConfig::default(), |g, ids| {
        let bound = m.bind(g, false);
        let (mu, logvar) = encoder_nodes(g, &bound, ids[0]).map_err(to_nd)?;
        let half = g.scale(logvar, 0.5)?;
        let sigma = g.exp(half)?;
        let eps = g.constant(noise.clone());
        let scaled = g.mul(sigma, eps)?;
        let z = g.add(scaled, mu)?;
        let hat = decoder_nodes(g, &bound, z).map_err(to_nd)?;

        let face = bind_face(g, assets, &beta).map_err(to_nd)?;
        let mut acc = None;
        for (t, mesh_gt) in gt.iter().enumerate() {
            let row = g.gather_rows(hat, &[t])?;
            let mesh = synthesize_node(g, assets, &face, row).map_err(to_nd)?;
            let c = g.constant(mesh_gt.clone());
            let d = g.sub(mesh, c)?;
            let sq = g.mul(d, d)?;
            let s = g.sum_all(sq)?;
            acc = Some(match acc {
                Some(prev) => g.add(prev, s)?,
                None => s,
            });
        }
        let coords = (16 * 3 * assets.n_vertices()) as f64;
        let mse = g.scale(acc.unwrap(), 1.0 / coords)?;
        let kl = kl_node(g, mu, logvar).map_err(to_nd)?;
        let kl_term = g.scale(kl, 1e-3)?;
        g.add(mse, kl_term)
    });
}

#[test]
fn training_runs_are_deterministic() {
    let (assets, data) = fixture();
    let mut view = data.clone();
    view.train.truncate(12);
    let cfg = PriorTrainConfig { epochs: 2, batch: 4, crop: 16, lr: 1e-4, seed: 9 };
    let weights = PriorLossWeights::default();
    let (m0, r0) = train_prior(assets, &view, &weights, &cfg).unwrap();
    let (m1, r1) = train_prior(assets, &view, &weights, &cfg).unwrap();

    assert_eq!(r0.total.len(), cfg.epochs);
    assert_eq!(r0.rec.len(), cfg.epochs);
    assert_eq!(r0.kl.len(), cfg.epochs);
    assert_eq!(r0.total, r1.total);
    assert_eq!(r0.rec, r1.rec);
    assert_eq!(r0.kl, r1.kl);
    for e in 0..cfg.epochs {
        assert!(r0.total[e].is_finite());
        assert!(r0.kl[e] > 0.0);
        assert_eq!(r0.total[e], r0.rec[e] + r0.kl[e]);
    }
    assert_eq!(m0.train_seed, 9);

    assert_eq!(m0.mu_w.data(), m1.mu_w.data());
    assert_eq!(m0.out_w.data(), m1.out_w.data());
    assert_eq!(m0.enc_conv_w[0].data(), m1.enc_conv_w[0].data());
    assert_eq!(m0.logvar_b.data(), m1.logvar_b.data());

    // The checkpoint files agree byte for byte.
    let dir = tempfile::tempdir().unwrap();
    let (p0, p1) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    m0.save(&p0).unwrap();
    m1.save(&p1).unwrap();
    assert_eq!(std::fs::read(&p0).unwrap(), std::fs::read(&p1).unwrap());
}

#[test]
fn training_rejects_bad_configs() {
    let (assets, data) = fixture();
    let mut view = data.clone();
    view.train.truncate(4);
    let base = PriorTrainConfig { epochs: 1, batch: 2, crop: 16, lr: 1e-4, seed: 0 };
    let w = PriorLossWeights::default();
    let msg = |cfg: &PriorTrainConfig| train_prior(assets, &view, &w, cfg).unwrap_err().to_string();

    assert!(msg(&PriorTrainConfig { epochs: 0, ..base.clone() }).contains("at least one epoch"));
    assert!(msg(&PriorTrainConfig { batch: 0, ..base.clone() }).contains("batch size"));
    assert!(msg(&PriorTrainConfig { lr: 0.0, ..base.clone() }).contains("learning rate"));
    assert!(msg(&PriorTrainConfig { crop: 17, ..base.clone() }).contains("not a positive multiple"));
    assert!(msg(&PriorTrainConfig { crop: 100, ..base.clone() }).contains("shorter than"));

    let bad = PriorLossWeights { rec: 0.0, kl: 1e-3 };
    assert!(train_prior(assets, &view, &bad, &base).unwrap_err().to_string().contains("rec > 0"));
    let bad = PriorLossWeights { rec: 1e6, kl: -1.0 };
    assert!(train_prior(assets, &view, &bad, &base).unwrap_err().to_string().contains("kl >= 0"));

    let mut empty = data.clone();
    empty.train.clear();
    assert!(train_prior(assets, &empty, &w, &base)
        .unwrap_err()
        .to_string()
        .contains("no training samples"));
}

#[test]
fn zero_prior_weight_degenerates_to_an_autoencoder() {
    let (assets, data) = fixture();
    let mut view = data.clone();
    view.train.truncate(24);
    let cfg = PriorTrainConfig { epochs: 8, ..PriorTrainConfig::default() };

    let ae_weights = PriorLossWeights { kl: 0.0, ..PriorLossWeights::default() };
    let (_ae, r_ae) = train_prior(assets, &view, &ae_weights, &cfg).unwrap();
    let (_vae, r_vae) = train_prior(assets, &view, &PriorLossWeights::default(), &cfg).unwrap();

    assert!(r_ae.kl.iter().all(|k| *k == 0.0), "disabled prior term must report zero");
    assert_eq!(r_ae.total, r_ae.rec);
    assert!(r_vae.kl.iter().all(|k| *k > 0.0));

    // Without the prior pull the reconstruction can only do better.
    let last = cfg.epochs - 1;
    assert!(
        r_ae.rec[last] <= r_vae.rec[last],
        "autoencoder rec {} vs regularized rec {}",
        r_ae.rec[last],
        r_vae.rec[last]
    );
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prior.ckpt");
    let mut m = MotionPrior::seeded(PriorHyper::default(), 5).unwrap();
    m.train_seed = 77;
    decode(&m, &Tensor::randn(&[1, m.hyper.latent], 1.0, &mut seeds::rng(90))).unwrap();
    assert_eq!(m.decode_calls(), 1);
    m.save(&path).unwrap();

    let loaded = MotionPrior::load(&path).unwrap();
    assert_eq!(loaded.hyper, m.hyper);
    assert_eq!(loaded.train_seed, 77);
    assert_eq!(loaded.decode_calls(), 0, "instrumentation must not survive the file");

    // Weights survive at narrowed precision exactly.
    for (orig, back) in [
        (&m.mu_w, &loaded.mu_w),
        (&m.out_w, &loaded.out_w),
        (&m.enc_conv_w[2], &loaded.enc_conv_w[2]),
        (&m.dec_conv_w[0], &loaded.dec_conv_w[0]),
    ] {
        assert_eq!(orig.shape(), back.shape());
        for (x, y) in orig.data().iter().zip(back.data()) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }

    // A second save of the loaded model reproduces the file bitwise.
    let path2 = dir.path().join("again.ckpt");
    loaded.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

    // Loaded twice, the model decodes identically.
    let z = Tensor::randn(&[2, m.hyper.latent], 1.0, &mut seeds::rng(91));
    let loaded2 = MotionPrior::load(&path).unwrap();
    let d1 = decode(&loaded, &z).unwrap();
    let d2 = decode(&loaded2, &z).unwrap();
    assert_eq!(d1.data(), d2.data());
    // And close to the original, which only lost the narrowing.
    let d0 = decode(&m, &z).unwrap();
    assert!(d0.max_abs_diff(&d1) < 1e-4);

    let other = dir.path().join("other.ckpt");
    mimic_core::archive::ArchiveBuilder::new("video-emotion").write(&other).unwrap();
    let err = MotionPrior::load(&other).unwrap_err().to_string();
    assert!(err.contains("motion-prior"), "{err}");
    assert!(MotionPrior::load(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn a_single_sequence_is_memorized() {
    let (assets, data) = fixture();
    let mut view = data.clone();
    let id = view.train[0];
    let toy = Tensor::from_vec(
        &[32, MOTION_DIM],
        view.records[id].motion.data()[..32 * MOTION_DIM].to_vec(),
    )
    .unwrap();
    view.records[id].motion = toy.clone();
    view.train = vec![id];
    view.val = vec![];

    let cfg = PriorTrainConfig { epochs: 300, batch: 1, crop: 0, lr: 1e-3, seed: 42 };
    let (m, _report) = train_prior(assets, &view, &PriorLossWeights::default(), &cfg).unwrap();

    // Deterministic reconstruction: spread forced to zero, decode the mean.
    let (mu, _sigma) = encode(&m, &toy).unwrap();
    let hat = decode(&m, &mu).unwrap();
    for t in 0..32 {
        let mut mse = 0.0;
        for d in 0..MOTION_DIM {
            let diff = hat.data()[t * MOTION_DIM + d] - toy.data()[t * MOTION_DIM + d];
            mse += diff * diff;
        }
        mse /= MOTION_DIM as f64;
        assert!(mse < 1e-3, "frame {t} reconstruction error {mse:.3e}");
    }
}

#[test]
fn desk_training_reaches_the_reconstruction_target() {
    let (assets, data) = fixture();
    let cfg = PriorTrainConfig::default();
    assert_eq!(data.train.len(), 200);

    let t0 = Instant::now();
    let (m, report) = train_prior(assets, data, &PriorLossWeights::default(), &cfg).unwrap();
    let elapsed = t0.elapsed();

    assert_eq!(report.rec.len(), 100);
    let (first, last) = (report.rec[0], report.rec[99]);
    assert!(
        last <= 0.05 * first,
        "weighted reconstruction fell {first:.3e} -> {last:.3e}, short of the 20x target"
    );
    assert!(report.total.iter().all(|v| v.is_finite()));
    assert!(
        elapsed.as_secs() < 15 * 60,
        "training took {:.0}s, over the desk budget",
        elapsed.as_secs_f64()
    );

    // The trained prior reconstructs held-out identities with the same
    // length contract.
    let rec = &data.records[data.val[0]];
    let (mu, sigma) = encode(&m, &rec.motion).unwrap();
    assert!(sigma.data().iter().all(|s| *s > 0.0 && s.is_finite()));
    let hat = decode(&m, &mu).unwrap();
    assert_eq!(hat.shape(), rec.motion.shape());
    let err = rec_loss(assets, &rec.beta, &hat, &rec.motion).unwrap();
    let base = rec_loss(assets, &rec.beta, &Tensor::zeros(&[64, MOTION_DIM]), &rec.motion).unwrap();
    assert!(
        err < base,
        "held-out reconstruction {err:.3e} no better than a frozen face {base:.3e}"
    );
}
