//! Naive versus separable convolution: instrumented MAC counts and timings.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use epnkit_core::conv::{
    group_conv_forward, group_gather_table, naive_se3_conv_with_cost, point_conv_forward, ConvCost, Kernel6d,
};
use epnkit_core::group::{FiniteRotationGroup, GroupKind};
use epnkit_core::testkit::{random_cloud, random_explicit_kernel, random_features, random_group_kernel, self_table};
use epnkit_core::{Error, Result};

const RADIUS: f64 = 0.7;
const K_MAX: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub seed: u64,
    pub group: GroupKind,
    pub kernel_points: Vec<usize>,
    pub group_neighbors: Vec<usize>,
    pub channels: usize,
    pub points: usize,
    pub runs: usize,
    /// Count MACs only; timing fields are left empty.
    pub dry: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            seed: 0,
            group: GroupKind::Icosahedral,
            kernel_points: vec![2, 4, 8, 16],
            group_neighbors: vec![2, 4, 8, 16],
            channels: 8,
            points: 64,
            runs: 5,
            dry: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub k_p: usize,
    pub k_g: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub n_points: usize,
    pub group_order: usize,
    pub naive_macs: u64,
    pub separable_macs: u64,
    pub mac_ratio: f64,
    pub expected_ratio: f64,
    /// `naive · (K_p + K_g) = separable · K_p · K_g` in integers.
    pub ratio_exact: bool,
    pub naive_median_seconds: Option<f64>,
    pub separable_median_seconds: Option<f64>,
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub group: GroupKind,
    pub runs: usize,
    pub dry: bool,
    pub rows: Vec<BenchRow>,
    pub pass: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    if !opts.dry && opts.runs < 5 {
        return Err(Error::InvalidArgument(format!("timed benchmarks need at least 5 runs, got {}", opts.runs)));
    }
    let group = FiniteRotationGroup::build(opts.group)?;
    let n_g = group.order();
    if let Some(&k) = opts.group_neighbors.iter().find(|&&k| k == 0 || k > n_g) {
        return Err(Error::InvalidArgument(format!("K_g = {k} is outside 1..={n_g}")));
    }
    let c = opts.channels;
    let cloud = random_cloud(opts.points, opts.seed);
    let f = random_features(&cloud, n_g, c, opts.seed + 1);
    let nbr = self_table(&cloud, RADIUS, K_MAX);
    let mut rows = Vec::new();
    for &k_p in &opts.kernel_points {
        for &k_g in &opts.group_neighbors {
            let kernel = random_explicit_kernel(k_p, c, c, RADIUS, opts.seed + 2);
            let gk = random_group_kernel(k_g, c, c, opts.seed + 3);
            let k6 = Kernel6d::rotational_delta(&kernel, k_g)?;
            let gather = group_gather_table(&group, k_g)?;
            let separable = |cost: Option<&mut ConvCost>| -> Result<()> {
                let mut local = ConvCost::default();
                let (mid, _) = point_conv_forward(&f, &kernel, &nbr, &group, Some(&mut local))?;
                group_conv_forward(&mid, &gk, &gather, Some(&mut local))?;
                if let Some(c) = cost {
                    *c = local;
                }
                Ok(())
            };
            let (_, naive_cost) = naive_se3_conv_with_cost(&f, &k6, &nbr, &group)?;
            let mut sep_cost = ConvCost::default();
            separable(Some(&mut sep_cost))?;
            let (naive, sep) = (naive_cost.weight_macs, sep_cost.weight_macs);
            let (kp, kg) = (k_p as u128, k_g as u128);
            let ratio_exact = naive as u128 * (kp + kg) == sep as u128 * kp * kg;

            let (mut t_naive, mut t_sep) = (None, None);
            if !opts.dry {
                let mut a = Vec::with_capacity(opts.runs);
                let mut b = Vec::with_capacity(opts.runs);
                for _ in 0..opts.runs {
                    let t = Instant::now();
                    naive_se3_conv_with_cost(&f, &k6, &nbr, &group)?;
                    a.push(t.elapsed().as_secs_f64());
                    let t = Instant::now();
                    separable(None)?;
                    b.push(t.elapsed().as_secs_f64());
                }
                t_naive = Some(median(a));
                t_sep = Some(median(b));
            }
            rows.push(BenchRow {
                k_p,
                k_g,
                c_in: c,
                c_out: c,
                n_points: opts.points,
                group_order: n_g,
                naive_macs: naive,
                separable_macs: sep,
                mac_ratio: naive as f64 / sep as f64,
                expected_ratio: (k_p * k_g) as f64 / (k_p + k_g) as f64,
                ratio_exact,
                naive_median_seconds: t_naive,
                separable_median_seconds: t_sep,
                speedup: t_naive.zip(t_sep).map(|(a, b)| a / b),
            });
        }
    }
    let pass = rows.iter().all(|r| r.ratio_exact);
    Ok(BenchReport {
        seed: opts.seed,
        group: opts.group,
        runs: opts.runs,
        dry: opts.dry,
        rows,
        pass,
    })
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "k_p,k_g,c_in,c_out,n_points,group_order,naive_macs,separable_macs,mac_ratio,expected_ratio,ratio_exact,naive_median_seconds,separable_median_seconds,speedup\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:?},{:?},{},{},{},{}",
                r.k_p,
                r.k_g,
                r.c_in,
                r.c_out,
                r.n_points,
                r.group_order,
                r.naive_macs,
                r.separable_macs,
                r.mac_ratio,
                r.expected_ratio,
                r.ratio_exact,
                opt(r.naive_median_seconds),
                opt(r.separable_median_seconds),
                opt(r.speedup)
            );
        }
        out
    }
}
