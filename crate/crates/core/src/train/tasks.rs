use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::conv::NormMode;
use crate::error::{Error, Result};
use crate::geom::{angular_distance, random_rotation, Rotation, Vec3};
use crate::group::GroupKind;
use crate::sampling::PointCloud;
use crate::train::{
    adam_step, decayed_learning_rate, AdamConfig, AdamState, HeadKind, HeadOutput, ParameterSet, Pooling, Target,
    ToyNetwork, Trace, TrainConfig,
};

const INIT_STREAM: u64 = 0x1111;
const TRAIN_STREAM: u64 = 0x2222;
const EVAL_STREAM: u64 = 0x3333;
const TEST_STREAM: u64 = 0x4444;

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Points spread evenly along bars from the origin, jittered, centered and
/// scaled so the farthest point lies on the unit sphere.
fn bars(points: usize, bars: &[(Vec3, f64)], jitter: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, jitter.max(0.0)).expect("finite jitter");
    let total: f64 = bars.iter().map(|b| b.1).sum();
    let mut counts: Vec<usize> = bars.iter().map(|b| (points as f64 * b.1 / total).floor() as usize).collect();
    let missing = points - counts.iter().sum::<usize>();
    counts[0] += missing;
    let mut pts = Vec::with_capacity(points);
    for ((dir, len), n) in bars.iter().zip(counts) {
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64 * len;
            let j = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            pts.push(*dir * t + j);
        }
    }
    let c = pts.iter().fold(Vec3::ZERO, |a, p| a + *p) * (1.0 / pts.len() as f64);
    let centered: Vec<Vec3> = pts.iter().map(|p| *p - c).collect();
    let r = centered.iter().map(|p| p.norm()).fold(0.0, f64::max);
    PointCloud::new(centered.into_iter().map(|p| p * (1.0 / r)).collect()).expect("finite shape")
}

/// Three orthogonal bars of unequal length; no rotation other than the
/// identity maps it onto itself.
pub fn bar_triple(points: usize, jitter: f64, seed: u64) -> PointCloud {
    bars(
        points,
        &[
            (Vec3::new(1.0, 0.0, 0.0), 1.0),
            (Vec3::new(0.0, 1.0, 0.0), 0.6),
            (Vec3::new(0.0, 0.0, 1.0), 0.35),
        ],
        jitter,
        seed,
    )
}

/// Two coplanar orthogonal bars.
pub fn l_shape(points: usize, jitter: f64, seed: u64) -> PointCloud {
    bars(
        points,
        &[(Vec3::new(1.0, 0.0, 0.0), 1.0), (Vec3::new(0.0, 1.0, 0.0), 0.7)],
        jitter,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub max_deg: f64,
}

pub fn error_stats(errors: &[f64]) -> ErrorStats {
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    ErrorStats {
        mean_deg: s.iter().sum::<f64>() / n as f64,
        median_deg: median,
        max_deg: s.last().copied().unwrap_or(f64::NAN),
    }
}

/// Mini-batch Adam over a [`ToyNetwork`]. Batch-norm statistics are shared
/// across the batch; results do not depend on the thread count.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub network: ToyNetwork,
    pub iteration: usize,
    state: AdamState,
    adam: AdamConfig,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(network: ToyNetwork, config: &TrainConfig) -> Self {
        let n = network.parameters().num_values();
        Trainer {
            network,
            iteration: 0,
            state: AdamState::new(n),
            adam: AdamConfig {
                learning_rate: config.learning_rate,
                beta1: config.beta1,
                beta2: config.beta2,
            },
            config: config.clone(),
        }
    }

    /// Mean loss and mean gradient over the batch, with the recorded trace.
    pub fn gradients(&self, batch: &[(PointCloud, Target)]) -> Result<(f64, ParameterSet, Trace)> {
        let net = &self.network;
        let clouds: Vec<PointCloud> = batch.iter().map(|b| b.0.clone()).collect();
        let trace = net.forward_batch(&clouds, NormMode::Train, true)?;
        let mut total = 0.0;
        let mut d_out = Vec::with_capacity(batch.len());
        for (out, (_, target)) in trace.outputs.iter().zip(batch) {
            let (l, g) = net.loss(out, target, self.config.lambda)?;
            total += l;
            d_out.push(g);
        }
        let mut grads = net.backward(&trace, &d_out)?;
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        Ok((total * scale, grads, trace))
    }

    /// One optimizer step; returns the mean batch loss before the update.
    pub fn step(&mut self, batch: &[(PointCloud, Target)]) -> Result<f64> {
        let (loss, grads, trace) = match self.gradients(batch) {
            Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    iteration: self.iteration,
                    seed: self.config.seed,
                })
            }
            other => other?,
        };
        if !loss.is_finite() || grads.flat().iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: self.iteration,
                seed: self.config.seed,
            });
        }
        self.network.update_running(&trace)?;
        let lr = decayed_learning_rate(
            self.config.learning_rate,
            self.iteration,
            self.config.decay_every,
            self.config.decay_factor,
        );
        let mut params = self.network.parameters();
        adam_step(&mut params, &grads, &mut self.state, &self.adam, lr)?;
        self.network.load(&params)?;
        self.iteration += 1;
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseHeadReport {
    pub head: &'static str,
    pub untrained: ErrorStats,
    pub trained: ErrorStats,
    /// Fraction of evaluation rotations whose top-scoring anchor is the
    /// nearest one (detection head only).
    pub anchor_accuracy: Option<f64>,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseReport {
    pub task: &'static str,
    pub group: GroupKind,
    pub seed: u64,
    pub parameters: usize,
    pub eval_rotations: usize,
    pub detection: PoseHeadReport,
    pub baseline: Option<PoseHeadReport>,
    pub config: TrainConfig,
}

fn evaluate_pose(net: &ToyNetwork, shape: &PointCloud, rotations: &[Rotation]) -> Result<(ErrorStats, Option<f64>)> {
    let results: Vec<Result<(f64, bool)>> = rotations
        .par_iter()
        .map(|r| {
            let trace = net.forward(&shape.rotated(r), NormMode::Inference, false)?;
            let pred = net.predict_rotation(trace.output())?;
            let hit = match trace.output() {
                HeadOutput::Detection { logits, .. } => {
                    let (u, _) = net.group.nearest_element(r)?;
                    let best = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
                    best == u
                }
                _ => false,
            };
            Ok((angular_distance(&pred, r)?, hit))
        })
        .collect();
    let mut errors = Vec::with_capacity(rotations.len());
    let mut hits = 0;
    for r in results {
        let (e, h) = r?;
        errors.push(e);
        hits += usize::from(h);
    }
    let accuracy = matches!(net.head, crate::train::Head::Detection { .. }).then(|| hits as f64 / rotations.len() as f64);
    Ok((error_stats(&errors), accuracy))
}

/// Trains one pose head on randomly rotated copies of the fixed bar-triple
/// shape and evaluates it on held-out rotations.
pub fn train_pose(config: &TrainConfig, kind: HeadKind) -> Result<(ToyNetwork, PoseHeadReport)> {
    let head = match kind {
        HeadKind::Detection => "detection",
        HeadKind::Baseline => "baseline",
        HeadKind::Classifier { .. } => return Err(Error::InvalidArgument("pose needs a rotation head".into())),
    };
    let shape = bar_triple(config.points, config.jitter, config.seed);
    let net = ToyNetwork::new(config, kind, &mut stream(config.seed, INIT_STREAM))?;
    let mut eval_rng = stream(config.seed, EVAL_STREAM);
    let eval: Vec<Rotation> = (0..config.eval_rotations).map(|_| random_rotation(&mut eval_rng)).collect();
    let (untrained, _) = evaluate_pose(&net, &shape, &eval)?;

    let mut trainer = Trainer::new(net, config);
    let mut rng = stream(config.seed, TRAIN_STREAM);
    let mut loss_curve = Vec::new();
    let mut final_loss = f64::NAN;
    let mut next_batch = || -> Vec<(PointCloud, Target)> {
        (0..config.batch_size)
            .map(|_| {
                let r = random_rotation(&mut rng);
                (shape.rotated(&r), Target::Rotation(r))
            })
            .collect()
    };
    for it in 0..config.iterations {
        final_loss = trainer.step(&next_batch())?;
        if config.log_every > 0 && it % config.log_every == 0 {
            loss_curve.push(final_loss);
        }
    }
    let calibration: Vec<Vec<PointCloud>> = (0..config.recalibration_batches)
        .map(|_| next_batch().into_iter().map(|b| b.0).collect())
        .collect();
    trainer.network.recalibrate_running(&calibration)?;
    let (trained, anchor_accuracy) = evaluate_pose(&trainer.network, &shape, &eval)?;
    Ok((
        trainer.network,
        PoseHeadReport {
            head,
            untrained,
            trained,
            anchor_accuracy,
            final_loss,
            loss_curve,
        },
    ))
}

/// Detection head, plus the direct-regression baseline when enabled.
/// Returns the report and the trained detection network.
pub fn toy_pose_task(config: &TrainConfig) -> Result<(PoseReport, ToyNetwork)> {
    config.validate()?;
    let (net, detection) = train_pose(config, HeadKind::Detection)?;
    let baseline = if config.baseline {
        Some(train_pose(config, HeadKind::Baseline)?.1)
    } else {
        None
    };
    Ok((
        PoseReport {
            task: "pose",
            group: config.group,
            seed: config.seed,
            parameters: net.parameters().num_values(),
            eval_rotations: config.eval_rotations,
            detection,
            baseline,
            config: config.clone(),
        },
        net,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceAudit {
    pub clouds: usize,
    pub rotations: usize,
    pub max_descriptor_deviation: f64,
    pub max_logit_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClsVariantReport {
    pub pooling: Pooling,
    pub accuracy: f64,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
    /// Counts of the largest attention weight per test cloud in ten equal
    /// bins over `[0, 1]` (attentive pooling only).
    pub attention_confidence: Option<Vec<usize>>,
    pub invariance: InvarianceAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClsReport {
    pub task: &'static str,
    pub group: GroupKind,
    pub seed: u64,
    pub test_samples: usize,
    pub variants: Vec<ClsVariantReport>,
    pub config: TrainConfig,
}

fn class_shape(config: &TrainConfig, label: usize, seed: u64) -> PointCloud {
    if label == 0 || config.identical_classes {
        bar_triple(config.points, config.jitter, seed)
    } else {
        l_shape(config.points, config.jitter, seed)
    }
}

fn class_sample(config: &TrainConfig, label: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let seed: u64 = rng.gen();
    let r = random_rotation(rng);
    class_shape(config, label, seed).rotated(&r)
}

fn classifier_outputs(net: &ToyNetwork, cloud: &PointCloud) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
    match net.forward(cloud, NormMode::Inference, false)?.outputs.swap_remove(0) {
        HeadOutput::Classes {
            logits,
            descriptor,
            attention,
        } => Ok((logits, descriptor, attention)),
        _ => Err(Error::InvalidArgument("network is not a classifier".into())),
    }
}

/// Logits and pooled descriptors of clouds against their copies rotated by
/// every group element.
pub fn invariance_audit(net: &ToyNetwork, clouds: &[PointCloud]) -> Result<InvarianceAudit> {
    let mut audit = InvarianceAudit {
        clouds: clouds.len(),
        rotations: net.group.order(),
        max_descriptor_deviation: 0.0,
        max_logit_deviation: 0.0,
    };
    for cloud in clouds {
        let (logits, desc, _) = classifier_outputs(net, cloud)?;
        let devs: Vec<Result<(f64, f64)>> = net
            .group
            .elements()
            .par_iter()
            .map(|g| {
                let (l, d, _) = classifier_outputs(net, &cloud.rotated(g))?;
                Ok((crate::conv::max_abs_diff(&d, &desc), crate::conv::max_abs_diff(&l, &logits)))
            })
            .collect();
        for d in devs {
            let (dd, dl) = d?;
            audit.max_descriptor_deviation = audit.max_descriptor_deviation.max(dd);
            audit.max_logit_deviation = audit.max_logit_deviation.max(dl);
        }
    }
    Ok(audit)
}

/// Trains a two-class classifier per pooling variant on randomly rotated
/// jittered shapes; returns the report and the trained networks.
pub fn toy_cls_task(config: &TrainConfig) -> Result<(ClsReport, Vec<ToyNetwork>)> {
    config.validate()?;
    let mut test_rng = stream(config.seed, TEST_STREAM);
    let test: Vec<(PointCloud, usize)> = (0..config.test_samples)
        .map(|i| (class_sample(config, i % 2, &mut test_rng), i % 2))
        .collect();
    let mut variants = Vec::new();
    let mut nets = Vec::new();
    for &pooling in &config.pooling {
        let kind = HeadKind::Classifier { pooling, classes: 2 };
        let net = ToyNetwork::new(config, kind, &mut stream(config.seed, INIT_STREAM))?;
        let mut trainer = Trainer::new(net, config);
        let mut rng = stream(config.seed, TRAIN_STREAM);
        let mut loss_curve = Vec::new();
        let mut final_loss = f64::NAN;
        let mut next_batch = |it: usize| -> Vec<(PointCloud, Target)> {
            (0..config.batch_size)
                .map(|j| {
                    let label = (it * config.batch_size + j) % 2;
                    (class_sample(config, label, &mut rng), Target::Class(label))
                })
                .collect()
        };
        for it in 0..config.iterations {
            final_loss = trainer.step(&next_batch(it))?;
            if config.log_every > 0 && it % config.log_every == 0 {
                loss_curve.push(final_loss);
            }
        }
        let calibration: Vec<Vec<PointCloud>> = (0..config.recalibration_batches)
            .map(|k| next_batch(config.iterations + k).into_iter().map(|b| b.0).collect())
            .collect();
        let mut net = trainer.network;
        net.recalibrate_running(&calibration)?;
        let outputs: Vec<Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)>> =
            test.par_iter().map(|(c, _)| classifier_outputs(&net, c)).collect();
        let mut correct = 0;
        let mut histogram = vec![0usize; 10];
        for ((_, label), out) in test.iter().zip(outputs) {
            let (logits, _, attention) = out?;
            let pred = usize::from(logits[1] > logits[0]);
            correct += usize::from(pred == *label);
            if let Some(a) = attention {
                let peak = a.iter().copied().fold(0.0, f64::max);
                histogram[((peak * 10.0) as usize).min(9)] += 1;
            }
        }
        let audit_clouds: Vec<PointCloud> = test.iter().take(2).map(|(c, _)| c.clone()).collect();
        variants.push(ClsVariantReport {
            pooling,
            accuracy: correct as f64 / test.len().max(1) as f64,
            final_loss,
            loss_curve,
            attention_confidence: (pooling == Pooling::Attentive).then_some(histogram),
            invariance: invariance_audit(&net, &audit_clouds)?,
        });
        nets.push(net);
    }
    Ok((
        ClsReport {
            task: "cls",
            group: config.group,
            seed: config.seed,
            test_samples: config.test_samples,
            variants,
            config: config.clone(),
        },
        nets,
    ))
}
