use std::collections::BTreeSet;
use std::sync::OnceLock;

use mimic_core::face::{
    bind_face, generate_assets, synthesize_node, AssetSpec, FaceAssets, MOTION_DIM,
};
use mimic_core::perceptual::{
    bind_projections, emotion_distance, emotion_distance_node, extract_frame_emotion,
    extract_lip_features, frame_emotion_node, frame_emotion_track, lip_distance,
    lip_distance_node, lip_feature_nodes, train_video_emotion, video_emotion, ClassifierConfig,
    Projections, VideoEmotionModel, EMOTION_WIDTH, LIP_WIDTH, SEQ_FEATURE_WIDTH,
};
use mimic_core::seeds;
use mimic_core::synthdata::{generate_dataset, Dataset, DatasetSpec, N_EMOTIONS};
use ndgrad::check::FdConfig;
use ndgrad::{Graph, Tensor};

const SEED: u64 = 7;

fn fixture() -> &'static (FaceAssets, Dataset, Projections) {
    static FIXTURE: OnceLock<(FaceAssets, Dataset, Projections)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let assets = generate_assets(&AssetSpec::default());
        let data = generate_dataset(&assets, &DatasetSpec::default(), SEED).unwrap();
        let proj = Projections::for_assets(&assets, SEED).unwrap();
        (assets, data, proj)
    })
}

/// Template mesh plus seeded displacements on the selected vertices.
fn perturbed(assets: &FaceAssets, verts: &[usize], sigma: f64, seed: u64) -> Tensor {
    let mut rng = seeds::rng(seed);
    let noise = Tensor::randn(&[verts.len(), 3], sigma, &mut rng);
    let mut mesh = assets.template.clone();
    for (k, &v) in verts.iter().enumerate() {
        for a in 0..3 {
            mesh.data_mut()[3 * v + a] += noise.data()[3 * k + a];
        }
    }
    mesh
}

fn small_view(data: &Dataset) -> Dataset {
    let mut d = data.clone();
    d.train.truncate(48);
    d.val.truncate(16);
    d
}

#[test]
fn lip_features_ignore_everything_outside_the_mouth() {
    let (assets, _, proj) = fixture();
    let mouth: BTreeSet<usize> = assets.mouth.iter().copied().collect();
    let outside: Vec<usize> = (0..assets.n_vertices()).filter(|v| !mouth.contains(v)).collect();

    let base: Vec<Tensor> = (0..3)
        .map(|t| perturbed(assets, &assets.mouth, 0.05, 100 + t))
        .collect();
    let noisy: Vec<Tensor> = base
        .iter()
        .enumerate()
        .map(|(t, mesh)| {
            let extra = perturbed(assets, &outside, 0.2, 400 + t as u64);
            let mut m = mesh.clone();
            for &v in &outside {
                for a in 0..3 {
                    m.data_mut()[3 * v + a] = extra.data()[3 * v + a];
                }
            }
            m
        })
        .collect();
    // The two tracks share mouth vertices and nothing else.
    for (a, b) in base.iter().zip(&noisy) {
        assert!(assets.mouth.iter().all(|&v| {
            (0..3).all(|x| a.data()[3 * v + x] == b.data()[3 * v + x])
        }));
        assert!(a.data() != b.data());
    }

    let fa = extract_lip_features(assets, proj, &base).unwrap();
    let fb = extract_lip_features(assets, proj, &noisy).unwrap();
    assert_eq!(fa.shape(), [3, LIP_WIDTH]);
    assert_eq!(fa.data(), fb.data());

    let err = extract_lip_features(assets, proj, &[]).unwrap_err().to_string();
    assert!(err.contains("empty vertex track"), "{err}");

    let wrong = Projections::seeded(6 * assets.mouth.len() + 6, 30, 1, 2).unwrap();
    let err = extract_lip_features(assets, &wrong, &base).unwrap_err().to_string();
    assert!(err.contains("lip projection expects"), "{err}");
}

#[test]
fn constant_tracks_have_constant_features_with_zero_velocity() {
    let (assets, _, proj) = fixture();
    let mesh = perturbed(assets, &assets.mouth, 0.04, 9);
    let track: Vec<Tensor> = (0..4).map(|_| mesh.clone()).collect();
    let f = extract_lip_features(assets, proj, &track).unwrap();
    // Zero deltas everywhere, so every frame matches the first bit for bit.
    for t in 1..4 {
        assert_eq!(
            &f.data()[t * LIP_WIDTH..(t + 1) * LIP_WIDTH],
            &f.data()[..LIP_WIDTH]
        );
    }
    let single = extract_lip_features(assets, proj, &track[..1]).unwrap();
    assert_eq!(single.data(), &f.data()[..LIP_WIDTH]);
}

#[test]
fn projection_preserves_cosine_ordering() {
    let (assets, _, proj) = fixture();
    // A random walk over mouth vertices, so pairwise similarities spread out.
    let mut track = Vec::with_capacity(10);
    let mut mesh = assets.template.clone();
    let mut rng = seeds::rng(77);
    for _ in 0..10 {
        let step = Tensor::randn(&[assets.mouth.len(), 3], 0.02, &mut rng);
        for (k, &v) in assets.mouth.iter().enumerate() {
            for a in 0..3 {
                mesh.data_mut()[3 * v + a] += step.data()[3 * k + a];
            }
        }
        track.push(mesh.clone());
    }

    // Full-dimensional oracle features: centered mouth coordinates plus
    // deltas, no projection.
    let centered = |m: &Tensor| -> Vec<f64> {
        let mut c = [0.0; 3];
        for &v in &assets.mouth {
            for a in 0..3 {
                c[a] += m.data()[3 * v + a];
            }
        }
        for x in &mut c {
            *x /= assets.mouth.len() as f64;
        }
        assets
            .mouth
            .iter()
            .flat_map(|&v| (0..3).map(move |a| m.data()[3 * v + a] - c[a]))
            .collect()
    };
    let mut full: Vec<Vec<f64>> = Vec::with_capacity(10);
    for (t, m) in track.iter().enumerate() {
        let cen = centered(m);
        let mut row = cen.clone();
        if t == 0 {
            row.extend(std::iter::repeat(0.0).take(cen.len()));
        } else {
            let prev = centered(&track[t - 1]);
            row.extend(cen.iter().zip(&prev).map(|(a, b)| a - b));
        }
        full.push(row);
    }

    let eta = extract_lip_features(assets, proj, &track).unwrap();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut oracle = Vec::new();
    let mut low = Vec::new();
    for i in 0..10 {
        for j in i + 1..10 {
            oracle.push(cos(&full[i], &full[j]));
            low.push(cos(
                &eta.data()[i * LIP_WIDTH..(i + 1) * LIP_WIDTH],
                &eta.data()[j * LIP_WIDTH..(j + 1) * LIP_WIDTH],
            ));
        }
    }
    let rho = spearman(&oracle, &low);
    assert!(rho >= 0.9, "rank correlation {rho}");
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |xs: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
        let mut r = vec![0.0; xs.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let mean = (a.len() as f64 - 1.0) / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let (x, y) = (ra[i] - mean, rb[i] - mean);
        num += x * y;
        da += x * x;
        db += y * y;
    }
    num / (da.sqrt() * db.sqrt())
}

#[test]
fn template_emotion_feature_is_pinned() {
    let (assets, _, proj) = fixture();
    let eps = extract_frame_emotion(assets, proj, &assets.template).unwrap();
    assert_eq!(eps.shape(), [EMOTION_WIDTH]);
    assert!(eps.is_finite());
    // Determinism pin for the default face, projection seed 7.
    let expect = [
        3.776016539742774,
        1.006577979613241,
        0.20184024097639747,
        -2.7054433616658273,
    ];
    for (a, b) in eps.data()[..4].iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn emotion_features_see_the_expression_region_only() {
    let (assets, _, proj) = fixture();
    let base = extract_frame_emotion(assets, proj, &assets.template).unwrap();

    // Moving one expression-region vertex by 1e-2 must register.
    let mut moved = assets.template.clone();
    let v = assets.expression_region[40];
    moved.data_mut()[3 * v + 1] += 1e-2;
    let shifted = extract_frame_emotion(assets, proj, &moved).unwrap();
    assert!(shifted.data() != base.data());

    // The scalp ring sits outside the expression region; moving it does not.
    let region: BTreeSet<usize> = assets.expression_region.iter().copied().collect();
    let outside: Vec<usize> = (0..assets.n_vertices()).filter(|v| !region.contains(v)).collect();
    assert!(!outside.is_empty());
    let mut scalp = assets.template.clone();
    for &v in &outside {
        scalp.data_mut()[3 * v] += 0.3;
        scalp.data_mut()[3 * v + 2] -= 0.1;
    }
    let same = extract_frame_emotion(assets, proj, &scalp).unwrap();
    assert_eq!(same.data(), base.data());
}

#[test]
fn classifier_shapes_and_pooling_invariance() {
    let (_, _, proj) = fixture();
    let model = VideoEmotionModel::seeded(proj.clone(), 5);
    let mut rng = seeds::rng(12);
    let frames = Tensor::randn(&[7, EMOTION_WIDTH], 1.0, &mut rng);
    let out = video_emotion(&model, &frames).unwrap();
    assert_eq!(out.emotion_logits.shape(), [N_EMOTIONS]);
    assert_eq!(out.intensity_logits.shape(), [3]);
    assert_eq!(out.pooled.shape(), [SEQ_FEATURE_WIDTH]);
    assert!(out.pooled.is_finite());

    // Repeating one frame more often must not move the pooled feature.
    let row: Vec<f64> = frames.data()[..EMOTION_WIDTH].to_vec();
    let tile = |n: usize| {
        let mut d = Vec::new();
        for _ in 0..n {
            d.extend_from_slice(&row);
        }
        Tensor::from_vec(&[n, EMOTION_WIDTH], d).unwrap()
    };
    let five = video_emotion(&model, &tile(5)).unwrap();
    let ten = video_emotion(&model, &tile(10)).unwrap();
    assert!(five.pooled.max_abs_diff(&ten.pooled) < 1e-9);

    let bad = Tensor::zeros(&[3, EMOTION_WIDTH - 1]);
    let err = video_emotion(&model, &bad).unwrap_err().to_string();
    assert!(err.contains("frame features must be"), "{err}");
}

#[test]
fn distances_hit_the_landmarks() {
    let a = Tensor::from_vec(&[4], vec![0.3, -1.2, 0.5, 2.0]).unwrap();
    assert_eq!(emotion_distance(&a, &a).unwrap(), -1.0);

    let x = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
    let y = Tensor::from_vec(&[2], vec![0.0, 3.0]).unwrap();
    assert!(emotion_distance(&x, &y).unwrap().abs() < 1e-12);

    let neg = Tensor::from_vec(&[4], a.data().iter().map(|v| -2.0 * v).collect()).unwrap();
    assert!((emotion_distance(&a, &neg).unwrap() - 1.0).abs() < 1e-12);

    let zero = Tensor::zeros(&[4]);
    let err = emotion_distance(&a, &zero).unwrap_err().to_string();
    assert!(err.contains("zero-norm"), "{err}");
    let err = emotion_distance(&a, &x).unwrap_err().to_string();
    assert!(err.contains("shapes differ"), "{err}");

    // Lip distance averages per-frame cosines: one aligned frame, one
    // orthogonal frame.
    let ta = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let tb = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let d = lip_distance(&ta, &tb).unwrap();
    assert!((d - (-0.5)).abs() < 1e-12, "{d}");
    assert_eq!(lip_distance(&ta, &ta).unwrap(), -1.0);

    let tz = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let err = lip_distance(&ta, &tz).unwrap_err().to_string();
    assert!(err.contains("frame 1"), "{err}");
    let short = Tensor::zeros(&[1, 2]);
    let err = lip_distance(&ta, &short).unwrap_err().to_string();
    assert!(err.contains("shapes differ"), "{err}");
}

#[test]
fn graph_features_match_plain_extraction() {
    let (assets, data, proj) = fixture();
    let rec = &data.records[0];
    let motion = Tensor::from_vec(&[4, MOTION_DIM], rec.motion.data()[..4 * MOTION_DIM].to_vec())
        .unwrap();
    let meshes = assets.synthesize_sequence(&rec.beta, &motion).unwrap();
    let lips = extract_lip_features(assets, proj, &meshes).unwrap();
    let eps = frame_emotion_track(assets, proj, &meshes).unwrap();

    let mut g = Graph::new();
    let face = bind_face(&mut g, assets, &rec.beta).unwrap();
    let pn = bind_projections(&mut g, proj);
    let mesh_nodes: Vec<_> = (0..4)
        .map(|t| {
            let row = Tensor::from_vec(
                &[1, MOTION_DIM],
                motion.data()[t * MOTION_DIM..(t + 1) * MOTION_DIM].to_vec(),
            )
            .unwrap();
            let r = g.constant(row);
            synthesize_node(&mut g, assets, &face, r).unwrap()
        })
        .collect();

    let lip_nodes = lip_feature_nodes(&mut g, assets, &pn, &mesh_nodes).unwrap();
    for (t, n) in lip_nodes.iter().enumerate() {
        for (a, b) in g.value(*n).data().iter().zip(&lips.data()[t * LIP_WIDTH..]) {
            assert!((a - b).abs() < 1e-9, "lip frame {t}: {a} vs {b}");
        }
    }
    for (t, &m) in mesh_nodes.iter().enumerate() {
        let en = frame_emotion_node(&mut g, assets, &pn, m).unwrap();
        for (a, b) in g.value(en).data().iter().zip(&eps.data()[t * EMOTION_WIDTH..]) {
            assert!((a - b).abs() < 1e-9, "emotion frame {t}: {a} vs {b}");
        }
    }

    // Distance nodes against their plain counterparts.
    let pa = Tensor::from_vec(&[8], vec![0.3, -1.2, 0.5, 2.0, -0.7, 0.1, 0.9, -0.4]).unwrap();
    let pb = Tensor::from_vec(&[8], vec![1.1, 0.2, -0.5, 1.0, 0.7, -1.1, 0.4, 0.8]).unwrap();
    let an = g.constant(pa.clone());
    let bn = g.constant(pb.clone());
    let dn = emotion_distance_node(&mut g, an, bn).unwrap();
    assert!((g.value(dn).item() - emotion_distance(&pa, &pb).unwrap()).abs() < 1e-9);

    let target_rows: Vec<_> = (0..4)
        .map(|t| {
            let row = Tensor::from_vec(&[1, LIP_WIDTH], lips.data()[t * LIP_WIDTH..(t + 1) * LIP_WIDTH].to_vec())
                .unwrap();
            g.constant(row)
        })
        .collect();
    let ld = lip_distance_node(&mut g, &lip_nodes, &target_rows).unwrap();
    // Generated rows equal the targets up to float noise, so the mean
    // negative cosine sits at the aligned end.
    assert!((g.value(ld).item() + 1.0).abs() < 1e-9);
}

#[test]
fn features_are_differentiable_through_synthesis() {
    let (assets, data, proj) = fixture();
    let rec = &data.records[3];
    let m0 = Tensor::from_vec(&[1, MOTION_DIM], rec.motion.data()[..MOTION_DIM].to_vec()).unwrap();
    let m1 = Tensor::from_vec(
        &[1, MOTION_DIM],
        rec.motion.data()[MOTION_DIM..2 * MOTION_DIM].to_vec(),
    )
    .unwrap();
    let other = &data.records[9];
    let other_meshes = assets
        .synthesize_sequence(&other.beta, &other.motion)
        .unwrap();
    let target_lips = extract_lip_features(assets, proj, &other_meshes[..2]).unwrap();
    let target_emotion = extract_frame_emotion(assets, proj, &other_meshes[2]).unwrap();
    let beta = rec.beta.clone();

    ndgrad::check::assert_gradients(&[m0, m1], &FdConfig::default(), |g, ids| {
        let face = bind_face(g, assets, &beta).map_err(to_nd)?;
        let pn = bind_projections(g, proj);
        let mesh0 = synthesize_node(g, assets, &face, ids[0]).map_err(to_nd)?;
        let mesh1 = synthesize_node(g, assets, &face, ids[1]).map_err(to_nd)?;
        let lips = lip_feature_nodes(g, assets, &pn, &[mesh0, mesh1]).map_err(to_nd)?;
        let targets: Vec<_> = (0..2)
            .map(|t| {
                let row = Tensor::from_vec(
                    &[1, LIP_WIDTH],
                    target_lips.data()[t * LIP_WIDTH..(t + 1) * LIP_WIDTH].to_vec(),
                )
                .unwrap();
                g.constant(row)
            })
            .collect();
        let d_lip = lip_distance_node(g, &lips, &targets).map_err(to_nd)?;
        let e1 = frame_emotion_node(g, assets, &pn, mesh1).map_err(to_nd)?;
        let e_target = g.constant(
            Tensor::from_vec(&[1, EMOTION_WIDTH], target_emotion.data().to_vec()).unwrap(),
        );
        let d_emo = emotion_distance_node(g, e1, e_target).map_err(to_nd)?;
        g.add(d_lip, d_emo)
    });
}

fn to_nd(e: mimic_core::CoreError) -> ndgrad::NdError {
    ndgrad::NdError::Invalid {
        op: "perceptual",
        msg: e.to_string(),
    }
}

#[test]
fn classifier_training_is_deterministic_and_reports_honestly() {
    let (assets, data, proj) = fixture();
    let view = small_view(data);
    let cfg = ClassifierConfig {
        epochs: 3,
        crop: 16,
        ..ClassifierConfig::default()
    };
    let (model_a, rep_a) = train_video_emotion(assets, &view, proj, &cfg).unwrap();
    let (model_b, rep_b) = train_video_emotion(assets, &view, proj, &cfg).unwrap();

    assert_eq!(rep_a.epoch_losses.len(), 3);
    assert_eq!(rep_a.epoch_losses, rep_b.epoch_losses);
    assert_eq!(model_a.embed_w.data(), model_b.embed_w.data());
    assert_eq!(model_a.layer.wq.data(), model_b.layer.wq.data());
    assert_eq!(model_a.emotion_w.data(), model_b.emotion_w.data());

    // Confusion rows account for every held-out sample of their class.
    let mut counts = vec![0usize; N_EMOTIONS];
    for &i in &view.val {
        counts[view.records[i].emotion] += 1;
    }
    for (k, row) in rep_a.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), counts[k], "class {k}");
    }
    for acc in [rep_a.dynamic_accuracy, rep_a.static_accuracy, rep_a.intensity_accuracy] {
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn single_emotion_training_set_is_rejected() {
    let (assets, data, proj) = fixture();
    let mut view = data.clone();
    let keep = view.records[view.train[0]].emotion;
    view.train.retain(|&i| view.records[i].emotion == keep);
    assert!(!view.train.is_empty());
    let err = train_video_emotion(assets, &view, proj, &ClassifierConfig::default())
        .unwrap_err()
        .to_string();
    assert!(err.contains("single emotion class"), "{err}");
}

#[test]
fn checkpoints_round_trip() {
    let (_, _, proj) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("classifier.arch");
    let model = VideoEmotionModel::seeded(proj.clone(), 23);
    model.save(&path).unwrap();
    let loaded = VideoEmotionModel::load(&path).unwrap();

    // Projections are rebuilt from their seeds, bit for bit.
    assert_eq!(loaded.projections.lip_seed, proj.lip_seed);
    assert_eq!(loaded.projections.emo_seed, proj.emo_seed);
    assert_eq!(loaded.projections.lip_map.data(), proj.lip_map.data());
    assert_eq!(loaded.projections.emo_map.data(), proj.emo_map.data());

    // Weights pass through 32-bit storage.
    for (a, b) in [
        (&model.embed_w, &loaded.embed_w),
        (&model.layer.ff_w1, &loaded.layer.ff_w1),
        (&model.intensity_w, &loaded.intensity_w),
    ] {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }

    // Saving the loaded model reproduces the file byte for byte.
    let path2 = dir.path().join("classifier2.arch");
    loaded.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap().len(), std::fs::read(&path2).unwrap().len());
    let reloaded = VideoEmotionModel::load(&path2).unwrap();
    assert_eq!(reloaded.embed_w.data(), loaded.embed_w.data());

    let wrong = dir.path().join("wrong.arch");
    fixture().0.save(&wrong).unwrap();
    let err = VideoEmotionModel::load(&wrong).unwrap_err().to_string();
    assert!(err.contains("video-emotion"), "{err}");
}

#[test]
fn trained_classifier_beats_static_and_reads_held_out_sequences() {
    let (assets, data, proj) = fixture();
    let cfg = ClassifierConfig::default();
    let (model, report) = train_video_emotion(assets, data, proj, &cfg).unwrap();

    assert_eq!(report.epoch_losses.len(), cfg.epochs);
    let first = report.epoch_losses[0];
    let last = report.epoch_losses[cfg.epochs - 1];
    assert!(
        last <= 0.2 * first,
        "loss fell only from {first:.3} to {last:.3}"
    );
    assert!(
        report.dynamic_accuracy >= 0.9,
        "held-out accuracy {:.3}",
        report.dynamic_accuracy
    );
    assert!(
        report.static_accuracy < report.dynamic_accuracy,
        "static {:.3} vs dynamic {:.3}",
        report.static_accuracy,
        report.dynamic_accuracy
    );

    let mut counts = vec![0usize; N_EMOTIONS];
    for &i in &data.val {
        counts[data.records[i].emotion] += 1;
    }
    for (k, row) in report.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), counts[k], "class {k}");
    }

    // Small circular shifts must leave almost every decision alone.
    let mut changed = 0;
    for &i in &data.val {
        let rec = &data.records[i];
        let meshes = assets.synthesize_sequence(&rec.beta, &rec.motion).unwrap();
        let eps = frame_emotion_track(assets, proj, &meshes).unwrap();
        let t = eps.shape()[0];
        let base = video_emotion(&model, &eps).unwrap();
        let mut rolled = Vec::with_capacity(t * EMOTION_WIDTH);
        for f in 0..t {
            let src = (f + 5) % t;
            rolled.extend_from_slice(&eps.data()[src * EMOTION_WIDTH..(src + 1) * EMOTION_WIDTH]);
        }
        let rolled = Tensor::from_vec(&[t, EMOTION_WIDTH], rolled).unwrap();
        let out = video_emotion(&model, &rolled).unwrap();
        if argmax(base.emotion_logits.data()) != argmax(out.emotion_logits.data()) {
            changed += 1;
        }
    }
    assert!(
        (changed as f64) <= 0.05 * data.val.len() as f64,
        "{changed} of {} decisions moved under a 5-frame shift",
        data.val.len()
    );

    // The trained model survives a disk round trip with its decisions intact.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trained.arch");
    model.save(&path).unwrap();
    let loaded = VideoEmotionModel::load(&path).unwrap();
    let mut agree = 0;
    for &i in &data.val {
        let rec = &data.records[i];
        let meshes = assets.synthesize_sequence(&rec.beta, &rec.motion).unwrap();
        let eps = frame_emotion_track(assets, proj, &meshes).unwrap();
        let a = video_emotion(&model, &eps).unwrap();
        let b = video_emotion(&loaded, &eps).unwrap();
        if argmax(a.emotion_logits.data()) == argmax(b.emotion_logits.data()) {
            agree += 1;
        }
    }
    assert!(agree >= data.val.len() - 1, "{agree} of {}", data.val.len());
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
