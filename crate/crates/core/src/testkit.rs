//! Seeded fixtures shared by the test suites and the audit command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{
    make_kernel_points, BatchNorm, Correlation, EquivariantFeatureMap, ExplicitKernel, GroupKernel, SpconvBlock,
};
use crate::geom::Vec3;
use crate::sampling::{ball_query_indexed, NeighborhoodTable, PointCloud};

/// Uniform points in `[-1, 1]³`.
pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect(),
    )
    .expect("non-empty finite cloud")
}

/// Points on the 2⁻¹⁰ grid inside `[-1, 1]³`. Adding any vector on the same
/// grid with components below 2⁴ is exact, so displacements survive
/// translation bit for bit.
pub fn dyadic_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coord = || rng.gen_range(-1024i32..=1024) as f64 / 1024.0;
    PointCloud::new((0..n).map(|_| Vec3::new(coord(), coord(), coord())).collect())
        .expect("non-empty finite cloud")
}

/// Gaussian-free uniform values in `[-1, 1]`.
pub fn random_values(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Feature map on `cloud` with uniform random values.
pub fn random_features(cloud: &PointCloud, group_order: usize, channels: usize, seed: u64) -> EquivariantFeatureMap {
    let values = random_values(cloud.len() * group_order * channels, seed);
    EquivariantFeatureMap::new(cloud.points.clone(), group_order, channels, values).expect("consistent shape")
}

/// Every point of `cloud` as a center of its own ball query.
pub fn self_table(cloud: &PointCloud, radius: f64, k_max: usize) -> NeighborhoodTable {
    let all: Vec<usize> = (0..cloud.len()).collect();
    ball_query_indexed(cloud, &all, radius, k_max).expect("valid ball query")
}

/// Explicit kernel with `k` spread kernel points, bandwidth `0.6·radius`.
pub fn random_explicit_kernel(k: usize, d_in: usize, d_out: usize, radius: f64, seed: u64) -> ExplicitKernel {
    ExplicitKernel::new(
        make_kernel_points(k, radius),
        random_values(k * d_in * d_out, seed),
        d_in,
        d_out,
        0.6 * radius,
        radius,
        Correlation::Linear,
    )
    .expect("valid kernel")
}

pub fn random_group_kernel(k_g: usize, d_in: usize, d_out: usize, seed: u64) -> GroupKernel {
    GroupKernel::new(k_g, random_values(k_g * d_in * d_out, seed), d_in, d_out).expect("valid kernel")
}

/// Block with random kernels, affine parameters and running statistics.
pub fn random_block(d_in: usize, d_out: usize, k: usize, k_g: usize, radius: f64, seed: u64) -> SpconvBlock {
    let mut bns = [BatchNorm::identity(d_out), BatchNorm::identity(d_out)];
    for (i, bn) in bns.iter_mut().enumerate() {
        let v = random_values(4 * d_out, seed + 100 + i as u64);
        bn.gamma = v[..d_out].iter().map(|x| 1.0 + 0.5 * x).collect();
        bn.beta = v[d_out..2 * d_out].to_vec();
        bn.running_mean = v[2 * d_out..3 * d_out].to_vec();
        bn.running_var = v[3 * d_out..].iter().map(|x| 1.5 + x).collect();
    }
    let [bn1, bn2] = bns;
    SpconvBlock {
        point: random_explicit_kernel(k, d_in, d_out, radius, seed),
        group: random_group_kernel(k_g, d_out, d_out, seed + 1),
        bn1,
        bn2,
    }
}
