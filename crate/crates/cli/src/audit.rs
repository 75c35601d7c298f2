//! Executable equivariance and correctness audit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use epnkit_core::conv::{
    group_conv_forward, group_gather_table, implicit_point_conv, naive_se3_conv, point_conv_forward,
    se3_group_conv, se3_point_conv, spherical_interpolate, ConvCost, EquivariantFeatureMap, ImplicitKernelParams,
    Kernel6d, NormMode, SpconvBlock,
};
use epnkit_core::geom::{random_rotation, Rotation};
use epnkit_core::group::{FiniteRotationGroup, GroupKind};
use epnkit_core::heads::{ga_pooling, pool_max, pool_mean, AnchorMlp, AttentionVector, Linear};
use epnkit_core::sampling::{NeighborhoodTable, PointCloud};
use epnkit_core::testkit::{
    dyadic_cloud, random_block, random_cloud, random_explicit_kernel, random_features, random_group_kernel,
    random_values, self_table,
};
use epnkit_core::train::{check_operator_gradients, HeadKind, ToyNetwork, TrainConfig};
use epnkit_core::Result;

const KERNEL_POINTS: usize = 8;
const GROUP_NEIGHBORS: usize = 6;
const RADIUS: f64 = 0.7;
const K_MAX: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOptions {
    pub seed: u64,
    pub group: GroupKind,
    pub points: usize,
    pub channels: usize,
    /// Swaps two entries of every group-axis permutation before use; the
    /// equivariance checks must then fail.
    pub corrupt_permutation: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            seed: 0,
            group: GroupKind::Tetrahedral,
            points: 64,
            channels: 8,
            corrupt_permutation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEnvironment {
    pub seed: u64,
    pub group: GroupKind,
    pub group_order: usize,
    pub points: usize,
    pub channels: usize,
    pub kernel_points: usize,
    pub group_neighbors: usize,
    pub radius: f64,
    pub k_max: usize,
    pub corrupt_permutation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub environment: AuditEnvironment,
    pub checks: Vec<AuditCheck>,
    pub pass: bool,
}

impl AuditReport {
    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }
}

struct Checks(Vec<AuditCheck>);

impl Checks {
    fn push(&mut self, name: &str, deviation: f64, tolerance: f64) {
        self.0.push(AuditCheck {
            name: name.to_string(),
            deviation,
            tolerance,
            // NaN deviations fail.
            pass: deviation <= tolerance,
        });
    }
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) })
}

pub fn run_audit(opts: &AuditOptions) -> Result<AuditReport> {
    let group = FiniteRotationGroup::build(opts.group)?;
    let n_g = group.order();
    let mut perms = (0..n_g)
        .map(|r| group.left_translation_permutation(r))
        .collect::<Result<Vec<_>>>()?;
    if opts.corrupt_permutation {
        for p in &mut perms {
            p.swap(1, 2);
        }
    }
    let mut checks = Checks(Vec::new());
    group_checks(&group, &perms, &mut checks);
    conv_checks(opts, &group, &perms, &mut checks)?;
    separability_checks(opts, &group, &mut checks)?;
    head_checks(opts, &group, &perms, &mut checks)?;
    let grads = check_operator_gradients(opts.seed)?;
    checks.push("gradients.operators", max_of(grads.iter().map(|g| g.report.max_rel_err)), 1e-4);

    let pass = checks.0.iter().all(|c| c.pass);
    Ok(AuditReport {
        environment: AuditEnvironment {
            seed: opts.seed,
            group: opts.group,
            group_order: n_g,
            points: opts.points,
            channels: opts.channels,
            kernel_points: KERNEL_POINTS,
            group_neighbors: GROUP_NEIGHBORS,
            radius: RADIUS,
            k_max: K_MAX,
            corrupt_permutation: opts.corrupt_permutation,
        },
        checks: checks.0,
        pass,
    })
}

/// Group axioms and orthogonality for `group` alone.
pub fn group_axiom_checks(group: &FiniteRotationGroup) -> Vec<AuditCheck> {
    let n = group.order();
    let perms: Vec<Vec<usize>> = (0..n).map(|r| group.left_translation_permutation(r).unwrap_or_default()).collect();
    let mut checks = Checks(Vec::new());
    group_checks(group, &perms, &mut checks);
    checks.0
}

fn group_checks(group: &FiniteRotationGroup, perms: &[Vec<usize>], checks: &mut Checks) {
    let n = group.order();
    let e = group.elements();
    checks.push("group.order", (n as f64 - group.kind().order() as f64).abs(), 0.0);
    let closure = max_of((0..n).flat_map(|i| (0..n).map(move |j| (e[i] * e[j]).max_abs_diff(&e[group.mul(i, j)]))));
    checks.push("group.closure", closure, 1e-9);
    let mut violations = 0usize;
    for i in 0..n {
        for j in 0..n {
            let ij = group.mul(i, j);
            for k in 0..n {
                if group.mul(ij, k) != group.mul(i, group.mul(j, k)) {
                    violations += 1;
                }
            }
        }
    }
    checks.push("group.associativity", violations as f64, 0.0);
    let inverse = max_of((0..n).flat_map(|i| {
        let inv = group.inv(i);
        [
            (e[i] * e[inv]).max_abs_diff(&Rotation::IDENTITY),
            (group.mul(i, inv) + group.mul(inv, i)) as f64,
        ]
    }));
    checks.push("group.inverse", inverse, 1e-12);
    let ortho = max_of(e.iter().flat_map(|r| {
        [
            (r.transpose() * *r).max_abs_diff(&Rotation::IDENTITY),
            (r.determinant() - 1.0).abs(),
        ]
    }));
    checks.push("group.orthogonality", ortho, 1e-12);
    // g_{π_r(j)} = g_r⁻¹ g_j.
    let perm_dev = max_of((0..n).flat_map(|r| {
        let inv = e[r].transpose();
        perms[r]
            .iter()
            .enumerate()
            .map(move |(j, &pj)| e[pj].max_abs_diff(&(inv * e[j])))
            .collect::<Vec<_>>()
    }));
    checks.push("group.permutation", perm_dev, 1e-9);
}

fn stack_forward(
    blocks: &[SpconvBlock],
    f: &EquivariantFeatureMap,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
    gather: &[usize],
) -> Result<EquivariantFeatureMap> {
    let mut x = f.clone();
    for b in blocks {
        x = b.forward(&x, nbr, group, gather, NormMode::Inference, None)?.0;
    }
    Ok(x)
}

fn conv_checks(opts: &AuditOptions, group: &FiniteRotationGroup, perms: &[Vec<usize>], checks: &mut Checks) -> Result<()> {
    let n_g = group.order();
    let d = opts.channels;
    let s = opts.seed;
    let cloud = random_cloud(opts.points, s);
    let f = random_features(&cloud, n_g, d, s + 1);
    let nbr = self_table(&cloud, RADIUS, K_MAX);
    let kernel = random_explicit_kernel(KERNEL_POINTS, d, d, RADIUS, s + 2);
    let gk = random_group_kernel(GROUP_NEIGHBORS, d, d, s + 3);
    let params = ImplicitKernelParams::new(random_values((d + 3) * d, s + 4), d, d)?;
    let blocks = [
        random_block(d, d, KERNEL_POINTS, GROUP_NEIGHBORS, RADIUS, s + 5),
        random_block(d, d, KERNEL_POINTS, GROUP_NEIGHBORS, RADIUS, s + 6),
    ];
    let gather = group_gather_table(group, GROUP_NEIGHBORS)?;

    type Op<'a> = Box<dyn Fn(&EquivariantFeatureMap, &NeighborhoodTable) -> Result<EquivariantFeatureMap> + 'a>;
    let ops: Vec<(&str, Op)> = vec![
        ("point_conv", Box::new(|f, n| se3_point_conv(f, &kernel, n, group))),
        ("group_conv", Box::new(|f, _| se3_group_conv(f, &gk, group))),
        ("implicit_conv", Box::new(|f, n| implicit_point_conv(f, &params, n, group))),
        ("spconv_stack", Box::new(|f, n| stack_forward(&blocks, f, n, group, &gather))),
    ];

    for (name, op) in &ops {
        let base = op(&f, &nbr)?;
        let mut dev: f64 = 0.0;
        for (r, perm) in perms.iter().enumerate() {
            let rot = group.element(r);
            let got = op(&f.act(rot, perm), &nbr.rotated(rot))?;
            dev = max_of([dev, got.max_abs_diff(&base.act(rot, perm))]);
        }
        checks.push(&format!("equivariance.{name}"), dev, 1e-9);
    }

    // Neighborhoods re-queried on the rotated cloud instead of shared.
    let base = se3_point_conv(&f, &kernel, &nbr, group)?;
    let mut dev: f64 = 0.0;
    for (r, perm) in perms.iter().enumerate() {
        let rot = group.element(r);
        let table = self_table(&cloud.rotated(rot), RADIUS, K_MAX);
        let got = se3_point_conv(&f.act(rot, perm), &kernel, &table, group)?;
        dev = max_of([dev, got.max_abs_diff(&base.act(rot, perm))]);
    }
    checks.push("equivariance.point_conv_requeried", dev, 1e-9);

    // Exact translations need exactly representable coordinates.
    let grid = dyadic_cloud(opts.points, s + 7);
    let fg = random_features(&grid, n_g, d, s + 8);
    let ng = self_table(&grid, RADIUS, K_MAX);
    let shift = epnkit_core::geom::Vec3::new(3.25, -1.5, 0.0078125);
    for (name, op) in &ops {
        let a = op(&fg, &ng)?;
        let b = op(&fg.translated(shift), &ng.translated(shift))?;
        checks.push(&format!("translation.{name}"), max_of(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs())), 0.0);
    }
    Ok(())
}

fn separability_checks(opts: &AuditOptions, group: &FiniteRotationGroup, checks: &mut Checks) -> Result<()> {
    let n_g = group.order();
    let d = opts.channels.min(4);
    let k_g = GROUP_NEIGHBORS.min(n_g);
    let s = opts.seed + 20;
    let n = opts.points.min(32);
    let cloud = random_cloud(n, s);
    let f = random_features(&cloud, n_g, d, s + 1);
    let nbr = self_table(&cloud, RADIUS, K_MAX);

    let kernel = random_explicit_kernel(KERNEL_POINTS, d, d, RADIUS, s + 2);
    let naive = naive_se3_conv(&f, &Kernel6d::rotational_delta(&kernel, k_g)?, &nbr, group)?;
    let sep = se3_point_conv(&f, &kernel, &nbr, group)?;
    checks.push("separability.rotational_delta", naive.max_abs_diff(&sep), 1e-12);

    let gk = random_group_kernel(k_g, d, d, s + 3);
    let min_gap = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| cloud.points[i].distance(cloud.points[j]))
        .fold(f64::INFINITY, f64::min);
    let naive = naive_se3_conv(&f, &Kernel6d::spatial_delta(&gk, 0.5 * min_gap)?, &nbr, group)?;
    let sep = se3_group_conv(&f, &gk, group)?;
    checks.push("separability.spatial_delta", naive.max_abs_diff(&sep), 1e-12);

    let (cost_naive, cost_sep) = mac_counts(&f, &nbr, group, 8, 8.min(n_g), s + 4)?;
    let k_g8 = 8.min(n_g) as u64;
    let exact = cost_naive * (8 + k_g8) == cost_sep * 8 * k_g8;
    checks.push("complexity.mac_ratio", if exact { 0.0 } else { 1.0 }, 0.0);
    Ok(())
}

/// Weight MACs of the naive convolution and of the separable pair at
/// `K_p = k_p`, `K_g = k_g`, channels kept from `f`.
pub fn mac_counts(
    f: &EquivariantFeatureMap,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
    k_p: usize,
    k_g: usize,
    seed: u64,
) -> Result<(u64, u64)> {
    let c = f.channels;
    let kernel = random_explicit_kernel(k_p, c, c, RADIUS, seed);
    let gk = random_group_kernel(k_g, c, c, seed + 1);
    let (_, naive) = epnkit_core::conv::naive_se3_conv_with_cost(f, &Kernel6d::rotational_delta(&kernel, k_g)?, nbr, group)?;
    let mut sep = ConvCost::default();
    let (mid, _) = point_conv_forward(f, &kernel, nbr, group, Some(&mut sep))?;
    group_conv_forward(&mid, &gk, &group_gather_table(group, k_g)?, Some(&mut sep))?;
    Ok((naive.weight_macs, sep.weight_macs))
}

fn head_checks(opts: &AuditOptions, group: &FiniteRotationGroup, perms: &[Vec<usize>], checks: &mut Checks) -> Result<()> {
    let n_g = group.order();
    let d = opts.channels;
    let s = opts.seed + 40;
    let feats = random_values(n_g * d, s);
    let permuted = |perm: &[usize]| -> Vec<f64> { perm.iter().flat_map(|&p| feats[p * d..(p + 1) * d].to_vec()).collect() };
    let mlp = AnchorMlp::new(
        Linear::new(d, 4, random_values(d * 4, s + 1), random_values(4, s + 2))?,
        Linear::new(4, 1, random_values(4, s + 3), random_values(1, s + 4))?,
    )?;
    let ga = |x: &[f64]| -> Result<Vec<f64>> {
        let a = AttentionVector::from_logits(&mlp.forward(x)?.0)?;
        ga_pooling(x, &a, 0.5)
    };
    let mean = pool_mean(&feats, n_g)?;
    let max = pool_max(&feats, n_g)?;
    let attentive = ga(&feats)?;
    let (mut dm, mut dx, mut da) = (0.0f64, 0.0f64, 0.0f64);
    for perm in perms {
        let p = permuted(perm);
        dm = max_of([dm, epnkit_core::conv::max_abs_diff(&pool_mean(&p, n_g)?, &mean)]);
        dx = max_of([dx, epnkit_core::conv::max_abs_diff(&pool_max(&p, n_g)?, &max)]);
        da = max_of([da, epnkit_core::conv::max_abs_diff(&ga(&p)?, &attentive)]);
    }
    checks.push("invariance.pool_mean", dm, 1e-12);
    checks.push("invariance.pool_max", dx, 1e-12);
    checks.push("invariance.ga_pooling", da, 1e-12);

    // Interpolating rotated features at a rotated query recovers the value.
    let mut rng = ChaCha8Rng::seed_from_u64(s + 5);
    let mut di: f64 = 0.0;
    for _ in 0..4 {
        let q = random_rotation(&mut rng);
        let base = spherical_interpolate(&feats, group, &q, 4.min(n_g), 3.0)?;
        for (r, perm) in perms.iter().enumerate() {
            let rq = *group.element(r) * q;
            let got = spherical_interpolate(&permuted(perm), group, &rq, 4.min(n_g), 3.0)?;
            di = max_of([di, epnkit_core::conv::max_abs_diff(&got, &base)]);
        }
    }
    checks.push("equivariance.interpolation", di, 1e-12);

    // Detection prediction through a randomly initialized toy network.
    let config = TrainConfig {
        group: opts.group,
        points: 48,
        ..TrainConfig::default()
    };
    let net = ToyNetwork::new(&config, HeadKind::Detection, &mut ChaCha8Rng::seed_from_u64(s + 6))?;
    let cloud: PointCloud = random_cloud(config.points, s + 7);
    let predict = |c: &PointCloud| -> Result<Rotation> {
        let t = net.forward(c, NormMode::Inference, false)?;
        net.predict_rotation(t.output())
    };
    let base = predict(&cloud)?;
    let mut dd: f64 = 0.0;
    for g in group.elements() {
        let got = predict(&cloud.rotated(g))?;
        dd = max_of([dd, got.max_abs_diff(&(*g * base))]);
    }
    checks.push("equivariance.detection_head", dd, 1e-9);
    Ok(())
}
