//! Central-difference checks of every differentiable operator against its
//! analytic backward pass, on small seeded inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conv::{
    batch_norm_backward, batch_norm_forward, group_conv_backward, group_gather_table, implicit_conv_backward,
    implicit_point_conv, leaky_relu, leaky_relu_backward, make_kernel_points, point_conv_backward, point_conv_forward,
    se3_group_conv, se3_point_conv, spherical_interpolate, spherical_interpolate_backward, BatchNorm, Correlation,
    EquivariantFeatureMap, ExplicitKernel, GroupKernel, ImplicitKernelParams, NormMode, SpconvBlock,
};
use crate::error::Result;
use crate::geom::random_rotation;
use crate::group::{FiniteRotationGroup, GroupKind};
use crate::heads::{
    batch_hard_triplet, batch_hard_triplet_grad, combined_loss, cross_entropy, cross_entropy_grad,
    detection_loss_local, ga_pooling, ga_pooling_backward, pool_max, pool_max_backward, pool_mean, pool_mean_backward,
    quaternion_regression_loss, softmax, softmax_backward, AnchorMlp, AttentionVector, Linear,
};
use crate::sampling::{ball_query_indexed, PointCloud};
use crate::testkit::{random_cloud, random_values};
use crate::train::{relative_error, GradCheckReport, GRADCHECK_STEP};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpGradReport {
    /// Operator and the argument differentiated, e.g. `point_conv.weights`.
    pub op: String,
    pub report: GradCheckReport,
}

type Signature<'a> = Option<&'a dyn Fn(&[f64]) -> Vec<u32>>;

fn fd_check(op: &str, x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64, kink: Signature) -> OpGradReport {
    let base = kink.map(|k| k(x));
    let mut report = GradCheckReport {
        checked: 0,
        excluded: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + GRADCHECK_STEP;
        let up = f(&probe);
        let sig_up = kink.map(|k| k(&probe));
        probe[i] = x[i] - GRADCHECK_STEP;
        let down = f(&probe);
        let sig_down = kink.map(|k| k(&probe));
        probe[i] = x[i];
        if sig_up != base || sig_down != base {
            report.excluded += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some(format!("[{i}]: analytic {:e}, numeric {numeric:e}", analytic[i]));
        }
    }
    OpGradReport {
        op: op.to_string(),
        report,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn signs(v: &[f64]) -> Vec<u32> {
    v.iter().map(|x| u32::from(*x >= 0.0)).collect()
}

fn with_values(f: &EquivariantFeatureMap, v: &[f64]) -> EquivariantFeatureMap {
    EquivariantFeatureMap {
        values: v.to_vec(),
        ..f.clone()
    }
}

/// Runs every operator check; all reports should pass at `1e-4`.
pub fn check_operator_gradients(seed: u64) -> Result<Vec<OpGradReport>> {
    let group = FiniteRotationGroup::build(GroupKind::Tetrahedral)?;
    let n_g = group.order();
    let cloud: PointCloud = random_cloud(10, seed);
    let all: Vec<usize> = (0..cloud.len()).collect();
    let nbr = ball_query_indexed(&cloud, &all, 0.9, 5)?;
    let (d_in, d_out) = (2, 3);
    let f = EquivariantFeatureMap::new(cloud.points.clone(), n_g, d_in, random_values(10 * n_g * d_in, seed + 1))?;
    let up = random_values(10 * n_g * d_out, seed + 2);
    let mut out = Vec::new();

    let kernel = ExplicitKernel::new(
        make_kernel_points(4, 0.9),
        random_values(4 * d_in * d_out, seed + 3),
        d_in,
        d_out,
        0.6,
        0.9,
        Correlation::Linear,
    )?;
    let (_, cache) = point_conv_forward(&f, &kernel, &nbr, &group, None)?;
    let (df, dw) = point_conv_backward(&f, &kernel, &nbr, &cache, &up);
    let point_loss = |fm: &EquivariantFeatureMap, k: &ExplicitKernel| {
        se3_point_conv(fm, k, &nbr, &group).map_or(f64::NAN, |o| dot(&o.values, &up))
    };
    out.push(fd_check("point_conv.features", &f.values, &df, |v| point_loss(&with_values(&f, v), &kernel), None));
    out.push(fd_check(
        "point_conv.weights",
        &kernel.weights,
        &dw,
        |w| point_loss(&f, &ExplicitKernel { weights: w.to_vec(), ..kernel.clone() }),
        None,
    ));

    let gk = GroupKernel::new(3, random_values(3 * d_in * d_out, seed + 4), d_in, d_out)?;
    let gather = group_gather_table(&group, 3)?;
    let (df, dw) = group_conv_backward(&f, &gk, &gather, &up);
    let group_loss = |fm: &EquivariantFeatureMap, k: &GroupKernel| {
        se3_group_conv(fm, k, &group).map_or(f64::NAN, |o| dot(&o.values, &up))
    };
    out.push(fd_check("group_conv.features", &f.values, &df, |v| group_loss(&with_values(&f, v), &gk), None));
    out.push(fd_check(
        "group_conv.weights",
        &gk.weights,
        &dw,
        |w| group_loss(&f, &GroupKernel { weights: w.to_vec(), ..gk.clone() }),
        None,
    ));

    let ip = ImplicitKernelParams::new(random_values((d_in + 3) * d_out, seed + 5), d_in, d_out)?;
    let (df, dw) = implicit_conv_backward(&f, &ip, &nbr, &group, &up);
    let implicit_loss = |fm: &EquivariantFeatureMap, p: &ImplicitKernelParams| {
        implicit_point_conv(fm, p, &nbr, &group).map_or(f64::NAN, |o| dot(&o.values, &up))
    };
    out.push(fd_check("implicit_conv.features", &f.values, &df, |v| implicit_loss(&with_values(&f, v), &ip), None));
    out.push(fd_check(
        "implicit_conv.weights",
        &ip.weights,
        &dw,
        |w| implicit_loss(&f, &ImplicitKernelParams { weights: w.to_vec(), ..ip.clone() }),
        None,
    ));

    let x = random_values(8 * d_out, seed + 6);
    let ux = random_values(8 * d_out, seed + 7);
    let bn = BatchNorm {
        gamma: random_values(d_out, seed + 8),
        beta: random_values(d_out, seed + 9),
        running_mean: random_values(d_out, seed + 10),
        running_var: vec![0.5, 1.0, 2.0],
    };
    for (mode, tag) in [(NormMode::Train, "train"), (NormMode::Inference, "inference")] {
        let (_, cache) = batch_norm_forward(&x, &bn, mode)?;
        let (dx, dg, db) = batch_norm_backward(&bn, &cache, &ux);
        let loss = |x: &[f64], b: &BatchNorm| batch_norm_forward(x, b, mode).map_or(f64::NAN, |o| dot(&o.0, &ux));
        out.push(fd_check(&format!("batch_norm.{tag}.input"), &x, &dx, |v| loss(v, &bn), None));
        out.push(fd_check(
            &format!("batch_norm.{tag}.gamma"),
            &bn.gamma,
            &dg,
            |v| loss(&x, &BatchNorm { gamma: v.to_vec(), ..bn.clone() }),
            None,
        ));
        out.push(fd_check(
            &format!("batch_norm.{tag}.beta"),
            &bn.beta,
            &db,
            |v| loss(&x, &BatchNorm { beta: v.to_vec(), ..bn.clone() }),
            None,
        ));
    }

    let dx = leaky_relu_backward(&x, &ux);
    out.push(fd_check("leaky_relu.input", &x, &dx, |v| dot(&leaky_relu(v), &ux), Some(&signs)));

    out.extend(block_checks(&f, &nbr, &group, seed)?);
    out.extend(pooling_checks(&group, seed)?);
    out.extend(head_checks(&group, seed)?);
    Ok(out)
}

fn block_checks(
    f: &EquivariantFeatureMap,
    nbr: &crate::sampling::NeighborhoodTable,
    group: &FiniteRotationGroup,
    seed: u64,
) -> Result<Vec<OpGradReport>> {
    let (d_in, d_out) = (f.channels, 3);
    let block = SpconvBlock {
        point: ExplicitKernel::new(
            make_kernel_points(4, 0.9),
            random_values(4 * d_in * d_out, seed + 20),
            d_in,
            d_out,
            0.6,
            0.9,
            Correlation::Linear,
        )?,
        group: GroupKernel::new(3, random_values(3 * d_out * d_out, seed + 21), d_out, d_out)?,
        bn1: BatchNorm {
            gamma: random_values(d_out, seed + 22),
            beta: random_values(d_out, seed + 23),
            ..BatchNorm::identity(d_out)
        },
        bn2: BatchNorm {
            gamma: random_values(d_out, seed + 24),
            beta: random_values(d_out, seed + 25),
            ..BatchNorm::identity(d_out)
        },
    };
    let gather = group_gather_table(group, 3)?;
    let mode = NormMode::Train;
    let (y, cache) = block.forward(f, nbr, group, &gather, mode, None)?;
    let up = random_values(y.values.len(), seed + 26);
    let (df, g) = block.backward(f, nbr, &gather, &cache, &up);
    let run = |fm: &EquivariantFeatureMap, b: &SpconvBlock| b.forward(fm, nbr, group, &gather, mode, None).ok();
    let loss = |fm: &EquivariantFeatureMap, b: &SpconvBlock| run(fm, b).map_or(f64::NAN, |(o, _)| dot(&o.values, &up));
    let sig = |fm: &EquivariantFeatureMap, b: &SpconvBlock| {
        run(fm, b).map_or(Vec::new(), |(_, c)| [signs(&c.pre1), signs(&c.pre2)].concat())
    };
    let mut out = Vec::new();
    out.push(fd_check(
        "spconv_block.features",
        &f.values,
        &df,
        |v| loss(&with_values(f, v), &block),
        Some(&|v: &[f64]| sig(&with_values(f, v), &block)),
    ));
    type Setter = fn(&mut SpconvBlock, &[f64]);
    let params: [(&str, Vec<f64>, &[f64], Setter); 6] = [
        ("point.weights", block.point.weights.clone(), &g.point, |b, v| b.point.weights = v.to_vec()),
        ("group.weights", block.group.weights.clone(), &g.group, |b, v| b.group.weights = v.to_vec()),
        ("bn1.gamma", block.bn1.gamma.clone(), &g.bn1_gamma, |b, v| b.bn1.gamma = v.to_vec()),
        ("bn1.beta", block.bn1.beta.clone(), &g.bn1_beta, |b, v| b.bn1.beta = v.to_vec()),
        ("bn2.gamma", block.bn2.gamma.clone(), &g.bn2_gamma, |b, v| b.bn2.gamma = v.to_vec()),
        ("bn2.beta", block.bn2.beta.clone(), &g.bn2_beta, |b, v| b.bn2.beta = v.to_vec()),
    ];
    for (name, x, analytic, set) in params {
        let with = |v: &[f64]| {
            let mut b = block.clone();
            set(&mut b, v);
            b
        };
        out.push(fd_check(
            &format!("spconv_block.{name}"),
            &x,
            analytic,
            |v| loss(f, &with(v)),
            Some(&|v: &[f64]| sig(f, &with(v))),
        ));
    }
    Ok(out)
}

fn pooling_checks(group: &FiniteRotationGroup, seed: u64) -> Result<Vec<OpGradReport>> {
    let n_g = group.order();
    let d = 3;
    let feats = random_values(n_g * d, seed + 30);
    let up = random_values(d, seed + 31);
    let mut out = Vec::new();

    let dm = pool_mean_backward(&feats, n_g, &up)?;
    out.push(fd_check("pool_mean.features", &feats, &dm, |v| dot(&pool_mean(v, n_g).unwrap(), &up), None));
    let argmax = |v: &[f64]| -> Vec<u32> {
        (0..d)
            .map(|c| (0..n_g).fold(0, |b, g| if v[g * d + c] > v[b * d + c] { g } else { b }) as u32)
            .collect()
    };
    let dx = pool_max_backward(&feats, n_g, &up)?;
    out.push(fd_check("pool_max.features", &feats, &dx, |v| dot(&pool_max(v, n_g).unwrap(), &up), Some(&argmax)));

    let logits = random_values(n_g, seed + 32);
    let t = 0.7;
    let a = AttentionVector::from_logits(&logits)?;
    let (df, da) = ga_pooling_backward(&feats, &a, t, &up)?;
    let d_logits = softmax_backward(a.weights(), &da);
    out.push(fd_check("ga_pooling.features", &feats, &df, |v| dot(&ga_pooling(v, &a, t).unwrap(), &up), None));
    out.push(fd_check(
        "ga_pooling.attention_logits",
        &logits,
        &d_logits,
        |l| dot(&ga_pooling(&feats, &AttentionVector::from_logits(l).unwrap(), t).unwrap(), &up),
        None,
    ));

    let us = random_values(n_g, seed + 33);
    let ds = softmax_backward(&softmax(&logits), &us);
    out.push(fd_check("softmax.logits", &logits, &ds, |l| dot(&softmax(l), &us), None));

    let q = random_rotation(&mut ChaCha8Rng::seed_from_u64(seed + 34));
    let di = spherical_interpolate_backward(group, &q, 4, 3.0, &up)?;
    out.push(fd_check(
        "spherical_interpolate.features",
        &feats,
        &di,
        |v| dot(&spherical_interpolate(v, group, &q, 4, 3.0).unwrap(), &up),
        None,
    ));
    Ok(out)
}

fn head_checks(group: &FiniteRotationGroup, seed: u64) -> Result<Vec<OpGradReport>> {
    let n_g = group.order();
    let (d, h) = (3, 4);
    let mut out = Vec::new();

    let lin = Linear::new(d, 2, random_values(d * 2, seed + 40), random_values(2, seed + 41))?;
    let x = random_values(n_g * d, seed + 42);
    let up = random_values(n_g * 2, seed + 43);
    let (dx, g) = lin.backward(&x, &up);
    let lin_loss = |l: &Linear, x: &[f64]| dot(&l.forward(x).unwrap(), &up);
    out.push(fd_check("linear.input", &x, &dx, |v| lin_loss(&lin, v), None));
    out.push(fd_check(
        "linear.weights",
        &lin.weights,
        &g.weights,
        |w| lin_loss(&Linear { weights: w.to_vec(), ..lin.clone() }, &x),
        None,
    ));
    out.push(fd_check(
        "linear.bias",
        &lin.bias,
        &g.bias,
        |b| lin_loss(&Linear { bias: b.to_vec(), ..lin.clone() }, &x),
        None,
    ));

    let mlp = AnchorMlp::new(
        Linear::new(d, h, random_values(d * h, seed + 44), random_values(h, seed + 45))?,
        Linear::new(h, 2, random_values(h * 2, seed + 46), random_values(2, seed + 47))?,
    )?;
    let (_, cache) = mlp.forward(&x)?;
    let (dx, g) = mlp.backward(&x, &cache, &up);
    let mlp_run = |m: &AnchorMlp, x: &[f64]| m.forward(x).unwrap();
    let mlp_loss = |m: &AnchorMlp, x: &[f64]| dot(&mlp_run(m, x).0, &up);
    let mlp_sig = |m: &AnchorMlp, x: &[f64]| signs(&mlp_run(m, x).1.pre);
    out.push(fd_check("anchor_mlp.input", &x, &dx, |v| mlp_loss(&mlp, v), Some(&|v: &[f64]| mlp_sig(&mlp, v))));
    let with_first = |w: &[f64]| AnchorMlp {
        first: Linear { weights: w.to_vec(), ..mlp.first.clone() },
        ..mlp.clone()
    };
    out.push(fd_check(
        "anchor_mlp.first.weights",
        &mlp.first.weights,
        &g.first.weights,
        |w| mlp_loss(&with_first(w), &x),
        Some(&|w: &[f64]| mlp_sig(&with_first(w), &x)),
    ));
    let with_second = |w: &[f64]| AnchorMlp {
        second: Linear { weights: w.to_vec(), ..mlp.second.clone() },
        ..mlp.clone()
    };
    out.push(fd_check(
        "anchor_mlp.second.weights",
        &mlp.second.weights,
        &g.second.weights,
        |w| mlp_loss(&with_second(w), &x),
        None,
    ));

    let logits = random_values(5, seed + 48);
    let (_, dl) = cross_entropy_grad(&logits, 2)?;
    out.push(fd_check("cross_entropy.logits", &logits, &dl, |l| cross_entropy(l, 2).unwrap(), None));
    let (_, dc) = combined_loss(0.3, &logits, Some(1), 0.5)?;
    out.push(fd_check(
        "combined_loss.attention_logits",
        &logits,
        &dc,
        |l| combined_loss(0.3, l, Some(1), 0.5).unwrap().0,
        None,
    ));

    let (b, dim, margin) = (4, 3, 1.0);
    let anchors = random_values(b * dim, seed + 49);
    let positives = random_values(b * dim, seed + 50);
    let tg = batch_hard_triplet_grad(&anchors, &positives, dim, margin)?;
    let triplet_sig = |a: &[f64], p: &[f64]| -> Vec<u32> {
        let dist = |i: usize, j: usize| {
            a[i * dim..(i + 1) * dim]
                .iter()
                .zip(&p[j * dim..(j + 1) * dim])
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        (0..b)
            .flat_map(|i| {
                let hardest = (0..b).filter(|&j| j != i).min_by(|&x, &y| dist(i, x).total_cmp(&dist(i, y))).unwrap();
                let active = dist(i, i) - dist(i, hardest) + margin > 0.0;
                [hardest as u32, u32::from(active)]
            })
            .collect()
    };
    out.push(fd_check(
        "batch_hard_triplet.anchors",
        &anchors,
        &tg.d_anchors,
        |a| batch_hard_triplet(a, &positives, dim, margin).unwrap(),
        Some(&|a: &[f64]| triplet_sig(a, &positives)),
    ));
    out.push(fd_check(
        "batch_hard_triplet.positives",
        &positives,
        &tg.d_positives,
        |p| batch_hard_triplet(&anchors, p, dim, margin).unwrap(),
        Some(&|p: &[f64]| triplet_sig(&anchors, p)),
    ));

    let r_gt = random_rotation(&mut ChaCha8Rng::seed_from_u64(seed + 51));
    let det_logits = random_values(n_g, seed + 52);
    let local = random_values(n_g * 4, seed + 53);
    let dg = detection_loss_local(&det_logits, &local, group, &r_gt, 0.8)?;
    out.push(fd_check(
        "detection_loss.logits",
        &det_logits,
        &dg.d_logits,
        |l| detection_loss_local(l, &local, group, &r_gt, 0.8).unwrap().loss,
        None,
    ));
    out.push(fd_check(
        "detection_loss.residuals",
        &local,
        &dg.d_local,
        |q| detection_loss_local(&det_logits, q, group, &r_gt, 0.8).unwrap().loss,
        None,
    ));
    let q = random_values(4, seed + 54);
    let (_, dq) = quaternion_regression_loss(&q, &r_gt)?;
    out.push(fd_check(
        "quaternion_regression.q",
        &q,
        &dq,
        |v| quaternion_regression_loss(v, &r_gt).unwrap().0,
        None,
    ));
    Ok(out)
}
