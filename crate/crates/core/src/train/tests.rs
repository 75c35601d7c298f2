use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::conv::NormMode;
use crate::error::Error;
use crate::geom::{angular_distance, quaternion_from_rotation, random_rotation};
use crate::group::GroupKind;
use crate::sampling::PointCloud;

fn small_config() -> TrainConfig {
    TrainConfig {
        group: GroupKind::Tetrahedral,
        points: 24,
        k_max: vec![6, 6],
        channels: vec![3, 4],
        kernel_points: 4,
        group_neighbors: 3,
        hidden: 5,
        ..TrainConfig::default()
    }
}

fn network(config: &TrainConfig, kind: HeadKind, seed: u64) -> ToyNetwork {
    ToyNetwork::new(config, kind, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn all_kinds() -> Vec<HeadKind> {
    let mut kinds = vec![HeadKind::Detection, HeadKind::Baseline];
    for pooling in [Pooling::Attentive, Pooling::Max, Pooling::Mean] {
        kinds.push(HeadKind::Classifier { pooling, classes: 2 });
    }
    kinds
}

fn target_for(kind: HeadKind, seed: u64) -> Target {
    match kind {
        HeadKind::Classifier { .. } => Target::Class(1),
        _ => Target::Rotation(random_rotation(&mut ChaCha8Rng::seed_from_u64(seed))),
    }
}

#[test]
fn backward_needs_a_recorded_pass() {
    let cfg = small_config();
    let net = network(&cfg, HeadKind::Detection, 1);
    let cloud = bar_triple(cfg.points, cfg.jitter, 3);
    let trace = net.forward(&cloud, NormMode::Train, false).unwrap();
    assert!(!trace.is_recorded());
    let (_, d) = net.loss(trace.output(), &target_for(HeadKind::Detection, 2), 1.0).unwrap();
    assert!(matches!(net.backward(&trace, &[d]), Err(Error::NotRecorded(_))));
    assert!(matches!(net.kink_signature(&trace), Err(Error::NotRecorded(_))));
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = small_config();
    for (i, kind) in all_kinds().into_iter().enumerate() {
        let net = network(&cfg, kind, 10 + i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let batch: Vec<(PointCloud, Target)> = (0..2)
            .map(|j| {
                let s = 20 + 2 * i as u64 + j;
                let cloud = if j == 0 { bar_triple(cfg.points, 0.05, s) } else { l_shape(cfg.points, 0.05, s) };
                let target = match kind {
                    HeadKind::Classifier { .. } => Target::Class(j as usize),
                    _ => target_for(kind, s),
                };
                (cloud.rotated(&random_rotation(&mut rng)), target)
            })
            .collect();
        let report = check_network_gradients(&net, &batch, cfg.lambda).unwrap();
        assert!(report.passes(1e-4), "{kind:?}: {report:?}");
        assert!(report.checked > report.excluded, "{kind:?}: {report:?}");
    }
}

#[test]
fn running_statistics_move_only_on_update() {
    let cfg = small_config();
    let mut net = network(&cfg, HeadKind::Detection, 4);
    let before = net.state();
    let trace = net.forward(&bar_triple(cfg.points, cfg.jitter, 5), NormMode::Train, true).unwrap();
    assert_eq!(net.state(), before);
    net.update_running(&trace).unwrap();
    assert_ne!(net.state(), before);
}

#[test]
fn checkpoint_restores_the_network() {
    let cfg = small_config();
    let net = network(&cfg, HeadKind::Detection, 6);
    let mut bytes = Vec::new();
    net.state().write_checkpoint(&mut bytes).unwrap();
    let mut other = network(&cfg, HeadKind::Detection, 7);
    other.load(&ParameterSet::read_checkpoint(&mut bytes.as_slice()).unwrap()).unwrap();
    let cloud = bar_triple(cfg.points, cfg.jitter, 8);
    let a = net.forward(&cloud, NormMode::Inference, false).unwrap().outputs;
    let b = other.forward(&cloud, NormMode::Inference, false).unwrap().outputs;
    assert_eq!(a, b);
}

#[test]
fn inference_batches_match_single_samples() {
    let cfg = small_config();
    let mut net = network(&cfg, HeadKind::Detection, 8);
    let clouds = vec![bar_triple(cfg.points, 0.05, 1), l_shape(cfg.points + 5, 0.05, 2)];
    let trace = net.forward_batch(&clouds, NormMode::Train, true).unwrap();
    net.update_running(&trace).unwrap();
    let batch = net.forward_batch(&clouds, NormMode::Inference, false).unwrap();
    for (c, out) in clouds.iter().zip(&batch.outputs) {
        assert_eq!(net.forward(c, NormMode::Inference, false).unwrap().output(), out);
    }
}

#[test]
fn load_rejects_foreign_layouts() {
    let cfg = small_config();
    let mut det = network(&cfg, HeadKind::Detection, 1);
    let base = network(&cfg, HeadKind::Baseline, 1);
    assert!(det.load(&base.parameters()).is_err());
}

#[test]
fn loss_decreases_over_first_iterations() {
    let cfg = TrainConfig {
        group: GroupKind::Tetrahedral,
        ..TrainConfig::default()
    };
    let shape = bar_triple(cfg.points, cfg.jitter, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch: Vec<(PointCloud, Target)> = (0..4)
        .map(|_| {
            let r = random_rotation(&mut rng);
            (shape.rotated(&r), Target::Rotation(r))
        })
        .collect();
    let mut trainer = Trainer::new(network(&cfg, HeadKind::Detection, 12), &cfg);
    let losses: Vec<f64> = (0..11).map(|_| trainer.step(&batch).unwrap()).collect();
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 2, "{losses:?}");
    assert!(losses[10] < losses[0], "{losses:?}");
}

#[test]
fn oracle_detection_output_has_zero_error() {
    let cfg = small_config();
    let net = network(&cfg, HeadKind::Detection, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let r = random_rotation(&mut rng);
        let (u, _) = net.group.nearest_element(&r).unwrap();
        let mut logits = vec![0.0; net.group.order()];
        logits[u] = 1.0;
        let local: Vec<f64> = net
            .group
            .elements()
            .iter()
            .flat_map(|g| quaternion_from_rotation(&(g.transpose() * r)).unwrap().to_array())
            .collect();
        let pred = net.predict_rotation(&HeadOutput::Detection { logits, local }).unwrap();
        let diff = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (pred.0[i][j] - r.0[i][j]).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
        // acos near 1 resolves angles only to about 1e-6 degrees.
        assert!(angular_distance(&pred, &r).unwrap() < 1e-5);
    }
}

#[test]
fn training_is_bit_reproducible_across_thread_counts() {
    let cfg = TrainConfig {
        batch_size: 3,
        ..small_config()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let shape = bar_triple(cfg.points, cfg.jitter, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut trainer = Trainer::new(network(&cfg, HeadKind::Detection, 3), &cfg);
            for _ in 0..3 {
                let batch: Vec<(PointCloud, Target)> = (0..cfg.batch_size)
                    .map(|_| {
                        let r = random_rotation(&mut rng);
                        (shape.rotated(&r), Target::Rotation(r))
                    })
                    .collect();
                trainer.step(&batch).unwrap();
            }
            trainer.network.state().flat()
        })
    };
    let a = run(1);
    let b = run(3);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn divergence_reports_iteration_and_seed() {
    let cfg = TrainConfig {
        learning_rate: f64::INFINITY,
        seed: 99,
        ..small_config()
    };
    let shape = bar_triple(cfg.points, cfg.jitter, 1);
    let r = random_rotation(&mut ChaCha8Rng::seed_from_u64(1));
    let batch = vec![(shape.rotated(&r), Target::Rotation(r))];
    let mut trainer = Trainer::new(network(&cfg, HeadKind::Detection, 3), &cfg);
    trainer.step(&batch).unwrap();
    let err = trainer.step(&batch).unwrap_err();
    assert!(matches!(err, Error::Diverged { iteration: 1, seed: 99 }), "{err:?}");
}

#[test]
fn identical_classes_are_not_separable() {
    let cfg = TrainConfig {
        identical_classes: true,
        iterations: 5,
        batch_size: 2,
        test_samples: 200,
        pooling: vec![Pooling::Mean],
        ..small_config()
    };
    let (report, _) = toy_cls_task(&cfg).unwrap();
    let acc = report.variants[0].accuracy;
    assert!((acc - 0.5).abs() < 0.15, "accuracy {acc}");
}

#[test]
fn untrained_pose_error_is_large() {
    let cfg = TrainConfig {
        iterations: 0,
        recalibration_batches: 0,
        baseline: false,
        eval_rotations: 64,
        ..small_config()
    };
    let (report, _) = toy_pose_task(&cfg).unwrap();
    assert!(report.detection.untrained.median_deg > 20.0);
    assert_eq!(report.detection.untrained, report.detection.trained);
}

#[test]
fn shapes_are_centered_and_asymmetric() {
    let group = crate::group::build_group(GroupKind::Icosahedral).unwrap();
    for shape in [bar_triple(128, 0.02, 5), l_shape(128, 0.02, 5)] {
        assert_eq!(shape.len(), 128);
        let c = shape.points.iter().fold(crate::geom::Vec3::ZERO, |a, p| a + *p);
        assert!(c.norm() < 1e-9);
        let r = shape.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
    }
    let shape = bar_triple(128, 0.02, 5);
    for g in &group.elements()[1..] {
        let moved = shape.rotated(g);
        let chamfer = moved
            .points
            .iter()
            .map(|p| shape.points.iter().map(|q| (*p - *q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / 128.0;
        assert!(chamfer > 0.05, "chamfer {chamfer}");
    }
}

#[test]
fn error_stats_median() {
    let s = error_stats(&[3.0, 1.0, 2.0]);
    assert_eq!((s.mean_deg, s.median_deg, s.max_deg), (2.0, 2.0, 3.0));
    assert_eq!(error_stats(&[4.0, 1.0, 2.0, 3.0]).median_deg, 2.5);
}

#[test]
fn recalibration_sets_running_statistics_to_the_batch_average() {
    let cfg = small_config();
    let mut net = network(&cfg, HeadKind::Detection, 6);
    let a = vec![bar_triple(cfg.points, cfg.jitter, 1), l_shape(cfg.points, cfg.jitter, 2)];
    let b = vec![l_shape(cfg.points, cfg.jitter, 3)];
    let running = |n: &ToyNetwork| -> Vec<f64> {
        n.blocks
            .iter()
            .flat_map(|blk| [&blk.bn1, &blk.bn2])
            .flat_map(|bn| bn.running_mean.iter().chain(&bn.running_var).copied().collect::<Vec<_>>())
            .collect()
    };
    // A momentum update from zeroed statistics leaves 0.1 of the batch values.
    let batch_stats = |batch: &[PointCloud]| -> Vec<f64> {
        let mut probe = net.clone();
        for blk in &mut probe.blocks {
            for bn in [&mut blk.bn1, &mut blk.bn2] {
                bn.running_mean.fill(0.0);
                bn.running_var.fill(0.0);
            }
        }
        probe.update_running(&net.forward_batch(batch, NormMode::Train, true).unwrap()).unwrap();
        running(&probe).into_iter().map(|v| v / 0.1).collect()
    };
    let (sa, sb) = (batch_stats(&a), batch_stats(&b));
    net.recalibrate_running(&[a, b]).unwrap();
    let diff = running(&net)
        .iter()
        .zip(sa.iter().zip(&sb))
        .map(|(g, (x, y))| (g - (x + y) / 2.0).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
    let before = net.state();
    net.recalibrate_running(&[]).unwrap();
    assert_eq!(net.state(), before);
}
