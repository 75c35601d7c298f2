use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{
    group_gather_table, make_kernel_points, BatchNorm, EquivariantFeatureMap, ExplicitKernel, GroupKernel, NormMode,
    SpconvBlock, SpconvCache,
};
use crate::error::{mismatch, Error, Result};
use crate::geom::{quaternion_matrix, Rotation};
use crate::group::FiniteRotationGroup;
use crate::heads::{
    cross_entropy_grad, detection_loss_local, ga_pooling, ga_pooling_backward, pool_max, pool_max_backward, pool_mean,
    pool_mean_backward, predict_rotation, quaternion_regression_loss, softmax_backward, AnchorMlp, AnchorMlpCache,
    AnchorMlpGrads, AttentionVector, DetectionOutput, Linear, LinearGrads,
};
use rayon::prelude::*;
use crate::sampling::{build_hierarchy, NeighborhoodTable, PointCloud};
use crate::train::{ParameterSet, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Attentive,
    Max,
    Mean,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Attentive => "attentive",
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "attentive" | "ga" => Ok(Pooling::Attentive),
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::Parse(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Per-anchor logits and anchor-frame residual quaternions.
    Detection,
    /// One quaternion regressed from the identity-anchor descriptor.
    Baseline,
    Classifier { pooling: Pooling, classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Detection { logits: AnchorMlp, residual: AnchorMlp },
    Baseline { regressor: AnchorMlp },
    Classifier { pooling: Pooling, attention: Option<AnchorMlp>, fc: Linear },
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput {
    Detection { logits: Vec<f64>, local: Vec<f64> },
    Quaternion(Vec<f64>),
    Classes { logits: Vec<f64>, descriptor: Vec<f64>, attention: Option<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadGrad {
    Detection { d_logits: Vec<f64>, d_local: Vec<f64> },
    Quaternion(Vec<f64>),
    Classes(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Rotation(Rotation),
    Class(usize),
}

#[derive(Debug, Clone)]
enum HeadCache {
    Detection { logits: AnchorMlpCache, residual: AnchorMlpCache },
    Baseline(AnchorMlpCache),
    Classifier { attention: Option<(AnchorMlpCache, Vec<f64>)> },
}

#[derive(Debug, Clone)]
struct Recorded {
    inputs: Vec<EquivariantFeatureMap>,
    blocks: Vec<SpconvCache>,
    /// Offset and count of each sample's centers in the last feature map.
    spans: Vec<(usize, usize)>,
    heads: Vec<HeadCache>,
}

/// One forward pass over a batch. Samples share batch-norm statistics in
/// training mode; caches for [`ToyNetwork::backward`] are kept only when the
/// pass was recorded.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Per-level neighborhoods of the whole batch, block-diagonal over samples.
    pub tables: Vec<NeighborhoodTable>,
    /// Spatially averaged last-block features per sample, each `|G| × D`.
    pub pooled: Vec<Vec<f64>>,
    pub outputs: Vec<HeadOutput>,
    recorded: Option<Recorded>,
}

impl Trace {
    pub fn is_recorded(&self) -> bool {
        self.recorded.is_some()
    }

    /// Output of the first sample.
    pub fn output(&self) -> &HeadOutput {
        &self.outputs[0]
    }
}

/// The toy backbone (one SPConv block per hierarchy level, then a spatial
/// mean) with one output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetwork {
    pub group: FiniteRotationGroup,
    pub blocks: Vec<SpconvBlock>,
    pub head: Head,
    pub radii: Vec<f64>,
    pub k_max: Vec<usize>,
    pub stride: usize,
    pub temperature: f64,
    gather: Vec<usize>,
}

fn uniform(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn glorot(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Linear {
    let s = (6.0 / (d_in + d_out) as f64).sqrt();
    Linear {
        d_in,
        d_out,
        weights: uniform(rng, d_in * d_out, s),
        bias: vec![0.0; d_out],
    }
}

struct Slot<'a> {
    name: String,
    shape: Vec<usize>,
    values: &'a mut Vec<f64>,
    trainable: bool,
}

fn linear_slots<'a>(prefix: &str, l: &'a mut Linear, out: &mut Vec<Slot<'a>>) {
    out.push(Slot {
        name: format!("{prefix}.weights"),
        shape: vec![l.d_in, l.d_out],
        values: &mut l.weights,
        trainable: true,
    });
    out.push(Slot {
        name: format!("{prefix}.bias"),
        shape: vec![l.d_out],
        values: &mut l.bias,
        trainable: true,
    });
}

fn mlp_slots<'a>(prefix: &str, m: &'a mut AnchorMlp, out: &mut Vec<Slot<'a>>) {
    linear_slots(&format!("{prefix}.first"), &mut m.first, out);
    linear_slots(&format!("{prefix}.second"), &mut m.second, out);
}

impl ToyNetwork {
    pub fn new(config: &TrainConfig, kind: HeadKind, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let group = FiniteRotationGroup::build(config.group)?;
        let k_g = config.group_neighbors;
        let mut blocks = Vec::new();
        let mut d_in = 1;
        for (l, &d_out) in config.channels.iter().enumerate() {
            let r = config.radii[l];
            let k = config.kernel_points;
            let point = ExplicitKernel::new(
                make_kernel_points(k, r),
                uniform(rng, k * d_in * d_out, (3.0 / (k * d_in) as f64).sqrt()),
                d_in,
                d_out,
                config.sigma_ratio * r,
                r,
                config.correlation,
            )?;
            let gk = GroupKernel::new(
                k_g,
                uniform(rng, k_g * d_out * d_out, (3.0 / (k_g * d_out) as f64).sqrt()),
                d_out,
                d_out,
            )?;
            blocks.push(SpconvBlock {
                point,
                group: gk,
                bn1: BatchNorm::identity(d_out),
                bn2: BatchNorm::identity(d_out),
            });
            d_in = d_out;
        }
        let d = d_in;
        let h = config.hidden;
        let identity_quaternion = |rng: &mut dyn rand::RngCore, scale: f64| Linear {
            d_in: h,
            d_out: 4,
            weights: (0..h * 4).map(|_| rng.gen_range(-1.0..1.0) * scale).collect(),
            bias: vec![1.0, 0.0, 0.0, 0.0],
        };
        let head = match kind {
            HeadKind::Detection => Head::Detection {
                logits: AnchorMlp::new(glorot(rng, d, h), glorot(rng, h, 1))?,
                residual: AnchorMlp::new(glorot(rng, d, h), identity_quaternion(rng, 0.0))?,
            },
            HeadKind::Baseline => Head::Baseline {
                regressor: AnchorMlp::new(glorot(rng, d, h), identity_quaternion(rng, 0.1))?,
            },
            HeadKind::Classifier { pooling, classes } => Head::Classifier {
                pooling,
                attention: match pooling {
                    Pooling::Attentive => Some(AnchorMlp::new(glorot(rng, d, h), glorot(rng, h, 1))?),
                    _ => None,
                },
                fc: glorot(rng, d, classes),
            },
        };
        let gather = group_gather_table(&group, k_g)?;
        Ok(ToyNetwork {
            group,
            blocks,
            head,
            radii: config.radii.clone(),
            k_max: config.k_max.clone(),
            stride: config.stride,
            temperature: config.temperature,
            gather,
        })
    }

    pub fn channels(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.point.d_out)
    }

    fn slots(&mut self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        for (b, blk) in self.blocks.iter_mut().enumerate() {
            let p = &mut blk.point;
            out.push(Slot {
                name: format!("block{b}.point.weights"),
                shape: vec![p.kernel_points.len(), p.d_in, p.d_out],
                values: &mut p.weights,
                trainable: true,
            });
            let g = &mut blk.group;
            out.push(Slot {
                name: format!("block{b}.group.weights"),
                shape: vec![g.neighbor_size, g.d_in, g.d_out],
                values: &mut g.weights,
                trainable: true,
            });
            for (tag, bn) in [("bn1", &mut blk.bn1), ("bn2", &mut blk.bn2)] {
                let d = bn.gamma.len();
                for (field, values, trainable) in [
                    ("gamma", &mut bn.gamma, true),
                    ("beta", &mut bn.beta, true),
                    ("running_mean", &mut bn.running_mean, false),
                    ("running_var", &mut bn.running_var, false),
                ] {
                    out.push(Slot {
                        name: format!("block{b}.{tag}.{field}"),
                        shape: vec![d],
                        values,
                        trainable,
                    });
                }
            }
        }
        match &mut self.head {
            Head::Detection { logits, residual } => {
                mlp_slots("head.logits", logits, &mut out);
                mlp_slots("head.residual", residual, &mut out);
            }
            Head::Baseline { regressor } => mlp_slots("head.regressor", regressor, &mut out),
            Head::Classifier { attention, fc, .. } => {
                if let Some(a) = attention {
                    mlp_slots("head.attention", a, &mut out);
                }
                linear_slots("head.fc", fc, &mut out);
            }
        }
        out
    }

    fn collect(&self, trainable_only: bool) -> ParameterSet {
        let mut copy = self.clone();
        let mut set = ParameterSet::new();
        for s in copy.slots() {
            if s.trainable || !trainable_only {
                set.insert(s.name, s.shape, s.values.clone())
                    .expect("slot names are unique and shapes consistent");
            }
        }
        set
    }

    /// Trainable parameters.
    pub fn parameters(&self) -> ParameterSet {
        self.collect(true)
    }

    /// Trainable parameters plus batch-norm running statistics.
    pub fn state(&self) -> ParameterSet {
        self.collect(false)
    }

    /// Overwrites every array named in `set`.
    pub fn load(&mut self, set: &ParameterSet) -> Result<()> {
        let mut slots = self.slots();
        for a in set.arrays() {
            let slot = slots
                .iter_mut()
                .find(|s| s.name == a.name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{}`", a.name)))?;
            if slot.shape != a.shape {
                return Err(mismatch("load parameters", format!("`{}` has shape {:?}", a.name, slot.shape)));
            }
            slot.values.copy_from_slice(&a.values);
        }
        Ok(())
    }

    fn zeroed(&self) -> ToyNetwork {
        let mut z = self.clone();
        for s in z.slots() {
            s.values.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn forward(&self, cloud: &PointCloud, mode: NormMode, record: bool) -> Result<Trace> {
        self.forward_batch(std::slice::from_ref(cloud), mode, record)
    }

    pub fn forward_batch(&self, clouds: &[PointCloud], mode: NormMode, record: bool) -> Result<Trace> {
        if clouds.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let hierarchies = clouds
            .par_iter()
            .map(|c| build_hierarchy(c, self.blocks.len(), self.stride, &self.radii, &self.k_max))
            .collect::<Result<Vec<_>>>()?;
        let tables = (0..self.blocks.len())
            .map(|l| NeighborhoodTable::concat(&hierarchies.iter().map(|h| h[l].table.clone()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let n_g = self.group.order();
        let coords: Vec<_> = clouds.iter().flat_map(|c| c.points.iter().copied()).collect();
        let mut x = EquivariantFeatureMap::ones(coords, n_g);
        let mut inputs = Vec::new();
        let mut caches = Vec::new();
        for (blk, table) in self.blocks.iter().zip(&tables) {
            let (y, cache) = blk.forward(&x, table, &self.group, &self.gather, mode, None)?;
            if record {
                inputs.push(std::mem::replace(&mut x, y));
                caches.push(cache);
            } else {
                x = y;
            }
        }
        let d = x.channels;
        let row = n_g * d;
        let mut spans = Vec::with_capacity(clouds.len());
        let mut offset = 0;
        for h in &hierarchies {
            let m = h.last().map_or(0, |l| l.table.num_centers());
            spans.push((offset, m));
            offset += m;
        }
        let pooled: Vec<Vec<f64>> = spans
            .iter()
            .map(|&(start, m)| {
                let mut p = vec![0.0; row];
                for i in start..start + m {
                    for (acc, v) in p.iter_mut().zip(&x.values[i * row..(i + 1) * row]) {
                        *acc += v;
                    }
                }
                p.iter_mut().for_each(|v| *v /= m as f64);
                p
            })
            .collect();
        let heads = pooled
            .par_iter()
            .map(|p| self.head_forward(p))
            .collect::<Result<Vec<_>>>()?;
        let (outputs, head_caches): (Vec<_>, Vec<_>) = heads.into_iter().unzip();
        if !outputs.iter().all(output_is_finite) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(Trace {
            tables,
            pooled,
            outputs,
            recorded: record.then_some(Recorded {
                inputs,
                blocks: caches,
                spans,
                heads: head_caches,
            }),
        })
    }

    fn head_forward(&self, pooled: &[f64]) -> Result<(HeadOutput, HeadCache)> {
        let n_g = self.group.order();
        let d = self.channels();
        Ok(match &self.head {
            Head::Detection { logits, residual } => {
                let (l, lc) = logits.forward(pooled)?;
                let (q, qc) = residual.forward(pooled)?;
                (
                    HeadOutput::Detection { logits: l, local: q },
                    HeadCache::Detection {
                        logits: lc,
                        residual: qc,
                    },
                )
            }
            Head::Baseline { regressor } => {
                let (q, c) = regressor.forward(&pooled[..d])?;
                (HeadOutput::Quaternion(q), HeadCache::Baseline(c))
            }
            Head::Classifier { pooling, attention, fc } => {
                let (descriptor, att) = match pooling {
                    Pooling::Mean => (pool_mean(pooled, n_g)?, None),
                    Pooling::Max => (pool_max(pooled, n_g)?, None),
                    Pooling::Attentive => {
                        let mlp = attention.as_ref().ok_or(Error::NotRecorded("attention branch"))?;
                        let (att_logits, c) = mlp.forward(pooled)?;
                        let a = AttentionVector::from_logits(&att_logits)?;
                        (ga_pooling(pooled, &a, self.temperature)?, Some((c, att_logits)))
                    }
                };
                let logits = fc.forward(&descriptor)?;
                let attention = att.as_ref().map(|(_, l)| crate::heads::softmax(l));
                (
                    HeadOutput::Classes {
                        logits,
                        descriptor,
                        attention,
                    },
                    HeadCache::Classifier { attention: att },
                )
            }
        })
    }

    /// Loss of `output` against `target` and the gradient w.r.t. the head output.
    pub fn loss(&self, output: &HeadOutput, target: &Target, lambda: f64) -> Result<(f64, HeadGrad)> {
        match (output, target) {
            (HeadOutput::Detection { logits, local }, Target::Rotation(r)) => {
                let g = detection_loss_local(logits, local, &self.group, r, lambda)?;
                Ok((
                    g.loss,
                    HeadGrad::Detection {
                        d_logits: g.d_logits,
                        d_local: g.d_local,
                    },
                ))
            }
            (HeadOutput::Quaternion(q), Target::Rotation(r)) => {
                let (l, g) = quaternion_regression_loss(q, r)?;
                Ok((l, HeadGrad::Quaternion(g.to_vec())))
            }
            (HeadOutput::Classes { logits, .. }, Target::Class(c)) => {
                let (l, g) = cross_entropy_grad(logits, *c)?;
                Ok((l, HeadGrad::Classes(g)))
            }
            _ => Err(Error::InvalidArgument("target does not match the head".into())),
        }
    }

    /// Gradient w.r.t. every trainable parameter of the summed per-sample
    /// losses, laid out like [`ToyNetwork::parameters`].
    pub fn backward(&self, trace: &Trace, d_outputs: &[HeadGrad]) -> Result<ParameterSet> {
        let rec = trace.recorded.as_ref().ok_or(Error::NotRecorded("toy network"))?;
        if d_outputs.len() != trace.outputs.len() {
            return Err(mismatch(
                "backward",
                format!("{} output gradients for {} samples", d_outputs.len(), trace.outputs.len()),
            ));
        }
        let row = self.group.order() * self.channels();
        let mut grad = self.zeroed();
        let total: usize = rec.spans.iter().map(|s| s.1).sum();
        let mut d_x = vec![0.0; total * row];
        for (s, d_out) in d_outputs.iter().enumerate() {
            let d_pooled = self.head_backward(&mut grad.head, trace, rec, s, d_out)?;
            let (start, m) = rec.spans[s];
            for i in start..start + m {
                for (dst, v) in d_x[i * row..(i + 1) * row].iter_mut().zip(&d_pooled) {
                    *dst = v / m as f64;
                }
            }
        }
        for b in (0..self.blocks.len()).rev() {
            let (dx, g) = self.blocks[b].backward(&rec.inputs[b], &trace.tables[b], &self.gather, &rec.blocks[b], &d_x);
            let gb = &mut grad.blocks[b];
            gb.point.weights = g.point;
            gb.group.weights = g.group;
            gb.bn1.gamma = g.bn1_gamma;
            gb.bn1.beta = g.bn1_beta;
            gb.bn2.gamma = g.bn2_gamma;
            gb.bn2.beta = g.bn2_beta;
            d_x = dx;
        }
        Ok(grad.parameters())
    }

    /// Accumulates head parameter gradients of sample `s` into `acc` and
    /// returns the gradient w.r.t. its pooled features.
    fn head_backward(&self, acc: &mut Head, trace: &Trace, rec: &Recorded, s: usize, d_output: &HeadGrad) -> Result<Vec<f64>> {
        let n_g = self.group.order();
        let d = self.channels();
        let pooled = &trace.pooled[s];
        Ok(match (&self.head, acc, &rec.heads[s], d_output) {
            (
                Head::Detection { logits, residual },
                Head::Detection {
                    logits: gl,
                    residual: gr,
                },
                HeadCache::Detection {
                    logits: lc,
                    residual: rc,
                },
                HeadGrad::Detection { d_logits, d_local },
            ) => {
                let (dp1, g1) = logits.backward(pooled, lc, d_logits);
                let (dp2, g2) = residual.backward(pooled, rc, d_local);
                add_mlp(gl, g1);
                add_mlp(gr, g2);
                dp1.iter().zip(&dp2).map(|(a, b)| a + b).collect()
            }
            (Head::Baseline { regressor }, Head::Baseline { regressor: gr }, HeadCache::Baseline(c), HeadGrad::Quaternion(dq)) => {
                let (dx, g) = regressor.backward(&pooled[..d], c, dq);
                add_mlp(gr, g);
                let mut dp = vec![0.0; n_g * d];
                dp[..d].copy_from_slice(&dx);
                dp
            }
            (
                Head::Classifier { pooling, attention, fc },
                Head::Classifier {
                    attention: ga, fc: gfc, ..
                },
                HeadCache::Classifier { attention: ac },
                HeadGrad::Classes(dl),
            ) => {
                let HeadOutput::Classes { descriptor, .. } = &trace.outputs[s] else {
                    return Err(mismatch("backward", "trace output is not a classifier output"));
                };
                let (d_desc, g) = fc.backward(descriptor, dl);
                add_linear(gfc, g);
                match pooling {
                    Pooling::Mean => pool_mean_backward(pooled, n_g, &d_desc)?,
                    Pooling::Max => pool_max_backward(pooled, n_g, &d_desc)?,
                    Pooling::Attentive => {
                        let (cache, att_logits) = ac.as_ref().ok_or(Error::NotRecorded("attention branch"))?;
                        let mlp = attention.as_ref().ok_or(Error::NotRecorded("attention branch"))?;
                        let a = AttentionVector::from_logits(att_logits)?;
                        let (dp, da) = ga_pooling_backward(pooled, &a, self.temperature, &d_desc)?;
                        let d_att = softmax_backward(a.weights(), &da);
                        let (dp2, g) = mlp.backward(pooled, cache, &d_att);
                        if let Some(ga) = ga {
                            add_mlp(ga, g);
                        }
                        dp.iter().zip(&dp2).map(|(a, b)| a + b).collect()
                    }
                }
            }
            _ => return Err(mismatch("backward", "head gradient does not match the head")),
        })
    }

    /// Moves batch-norm running statistics toward those of a recorded
    /// training-mode pass.
    pub fn update_running(&mut self, trace: &Trace) -> Result<()> {
        let rec = trace.recorded.as_ref().ok_or(Error::NotRecorded("batch norm statistics"))?;
        for (blk, cache) in self.blocks.iter_mut().zip(&rec.blocks) {
            blk.bn1.update_running(&cache.bn1);
            blk.bn2.update_running(&cache.bn2);
        }
        Ok(())
    }

    /// Replaces the running statistics with the average batch statistics of
    /// training-mode passes over `batches`, using the current weights.
    pub fn recalibrate_running(&mut self, batches: &[Vec<PointCloud>]) -> Result<()> {
        if batches.is_empty() {
            return Ok(());
        }
        let mut sums: Vec<[(Vec<f64>, Vec<f64>); 2]> = self
            .blocks
            .iter()
            .map(|b| {
                let zeros = |n: usize| (vec![0.0; n], vec![0.0; n]);
                [zeros(b.bn1.channels()), zeros(b.bn2.channels())]
            })
            .collect();
        for batch in batches {
            let trace = self.forward_batch(batch, NormMode::Train, true)?;
            let rec = trace.recorded.as_ref().ok_or(Error::NotRecorded("batch norm statistics"))?;
            for (sum, cache) in sums.iter_mut().zip(&rec.blocks) {
                for (acc, bn) in sum.iter_mut().zip([&cache.bn1, &cache.bn2]) {
                    let (mean, var) = bn.unbiased_statistics();
                    acc.0.iter_mut().zip(&mean).for_each(|(a, m)| *a += m);
                    acc.1.iter_mut().zip(&var).for_each(|(a, v)| *a += v);
                }
            }
        }
        let k = batches.len() as f64;
        for (blk, [s1, s2]) in self.blocks.iter_mut().zip(sums) {
            for (bn, (mean, var)) in [(&mut blk.bn1, s1), (&mut blk.bn2, s2)] {
                bn.running_mean = mean.into_iter().map(|m| m / k).collect();
                bn.running_var = var.into_iter().map(|v| v / k).collect();
            }
        }
        Ok(())
    }

    /// Predicted rotation for pose heads.
    pub fn predict_rotation(&self, output: &HeadOutput) -> Result<Rotation> {
        match output {
            HeadOutput::Detection { logits, local } => {
                predict_rotation(&DetectionOutput::from_local(logits, local, &self.group)?, &self.group)
            }
            HeadOutput::Quaternion(q) => {
                if q.iter().map(|v| v * v).sum::<f64>() > 0.0 {
                    Ok(Rotation(quaternion_matrix([q[0], q[1], q[2], q[3]])))
                } else {
                    Err(Error::InvalidArgument("zero quaternion".into()))
                }
            }
            HeadOutput::Classes { .. } => Err(Error::InvalidArgument("classifier has no rotation output".into())),
        }
    }

    /// Activation signs and max-pool winners of a recorded pass; the
    /// analytic gradient is only comparable with central differences where
    /// this pattern does not change.
    pub fn kink_signature(&self, trace: &Trace) -> Result<Vec<u32>> {
        let rec = trace.recorded.as_ref().ok_or(Error::NotRecorded("kink signature"))?;
        let sign = |v: &f64| u32::from(*v >= 0.0);
        let mut sig: Vec<u32> = Vec::new();
        for c in &rec.blocks {
            sig.extend(c.pre1.iter().map(sign));
            sig.extend(c.pre2.iter().map(sign));
        }
        for head in &rec.heads {
            match head {
                HeadCache::Detection { logits, residual } => {
                    sig.extend(logits.pre.iter().map(sign));
                    sig.extend(residual.pre.iter().map(sign));
                }
                HeadCache::Baseline(c) => sig.extend(c.pre.iter().map(sign)),
                HeadCache::Classifier { attention } => {
                    if let Some((c, _)) = attention {
                        sig.extend(c.pre.iter().map(sign));
                    }
                }
            }
        }
        if let Head::Classifier {
            pooling: Pooling::Max, ..
        } = self.head
        {
            let d = self.channels();
            for pooled in &trace.pooled {
                for c in 0..d {
                    let mut best = 0;
                    for g in 0..self.group.order() {
                        if pooled[g * d + c] > pooled[best * d + c] {
                            best = g;
                        }
                    }
                    sig.push(best as u32);
                }
            }
        }
        Ok(sig)
    }
}

fn add_linear(dst: &mut Linear, g: LinearGrads) {
    dst.weights.iter_mut().zip(&g.weights).for_each(|(a, b)| *a += b);
    dst.bias.iter_mut().zip(&g.bias).for_each(|(a, b)| *a += b);
}

fn add_mlp(dst: &mut AnchorMlp, g: AnchorMlpGrads) {
    add_linear(&mut dst.first, g.first);
    add_linear(&mut dst.second, g.second);
}

fn output_is_finite(o: &HeadOutput) -> bool {
    match o {
        HeadOutput::Detection { logits, local } => logits.iter().chain(local).all(|v| v.is_finite()),
        HeadOutput::Quaternion(q) => q.iter().all(|v| v.is_finite()),
        HeadOutput::Classes { logits, descriptor, .. } => logits.iter().chain(descriptor).all(|v| v.is_finite()),
    }
}
