use crate::conv::kernel::correlation;
use crate::conv::{matvec_acc, ConvCost, Correlation, EquivariantFeatureMap, ExplicitKernel, GroupKernel};
use crate::error::{mismatch, Error, Result};
use crate::geom::Vec3;
use crate::group::FiniteRotationGroup;
use crate::sampling::NeighborhoodTable;

/// Unfactored kernel over `K_p` kernel points and the `K_g` group elements
/// nearest the identity, one `D_in × D_out` matrix per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel6d {
    pub kernel_points: Vec<Vec3>,
    pub neighbor_size: usize,
    /// `K_p × K_g × D_in × D_out`, row-major.
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub correlation: Correlation,
    pub d_in: usize,
    pub d_out: usize,
}

impl Kernel6d {
    pub fn new(
        kernel_points: Vec<Vec3>,
        neighbor_size: usize,
        weights: Vec<f64>,
        sigma: f64,
        correlation: Correlation,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        let expected = kernel_points.len() * neighbor_size * d_in * d_out;
        if weights.len() != expected {
            return Err(mismatch("6d kernel", format!("{} weights, expected {expected}", weights.len())));
        }
        Ok(Kernel6d {
            kernel_points,
            neighbor_size,
            weights,
            sigma,
            correlation,
            d_in,
            d_out,
        })
    }

    /// Kernel supported on the identity rotation only; the naive convolution
    /// with it equals the point convolution with `kernel`.
    pub fn rotational_delta(kernel: &ExplicitKernel, neighbor_size: usize) -> Result<Self> {
        let s = kernel.d_in * kernel.d_out;
        let k_p = kernel.num_points();
        let mut w = vec![0.0; k_p * neighbor_size * s];
        for p in 0..k_p {
            w[p * neighbor_size * s..p * neighbor_size * s + s].copy_from_slice(kernel.weight(p));
        }
        Kernel6d::new(
            kernel.kernel_points.clone(),
            neighbor_size,
            w,
            kernel.sigma,
            kernel.correlation,
            kernel.d_in,
            kernel.d_out,
        )
    }

    /// Kernel with one point at the origin and linear correlation of width
    /// `sigma`; when `sigma` is below the smallest point spacing and every
    /// center is its own neighbor, the naive convolution with it equals the
    /// group convolution with `kernel`.
    pub fn spatial_delta(kernel: &GroupKernel, sigma: f64) -> Result<Self> {
        Kernel6d::new(
            vec![Vec3::ZERO],
            kernel.neighbor_size,
            kernel.weights.clone(),
            sigma,
            Correlation::Linear,
            kernel.d_in,
            kernel.d_out,
        )
    }

    pub fn weight(&self, p: usize, q: usize) -> &[f64] {
        let s = self.d_in * self.d_out;
        let o = (p * self.neighbor_size + q) * s;
        &self.weights[o..o + s]
    }
}

/// Direct discrete SE(3) convolution:
///
/// `out(x_m, g) = Σ_{x_i ∈ N(x_m)} Σ_q F(x_i, g·n_q⁻¹) Σ_p κ(g⁻¹(x_m − x_i), ỹ_p) W_{p,q}`
pub fn naive_se3_conv(
    features: &EquivariantFeatureMap,
    kernel: &Kernel6d,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
) -> Result<EquivariantFeatureMap> {
    naive_se3_conv_with_cost(features, kernel, nbr, group).map(|(out, _)| out)
}

pub fn naive_se3_conv_with_cost(
    features: &EquivariantFeatureMap,
    kernel: &Kernel6d,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
) -> Result<(EquivariantFeatureMap, ConvCost)> {
    features.check_group("naive_se3_conv", group.order())?;
    if features.channels != kernel.d_in || nbr.source_len != features.num_points() {
        return Err(mismatch("naive_se3_conv", "kernel, features and neighborhoods disagree"));
    }
    let n_g = group.order();
    let kp = kernel.kernel_points.len();
    let k_g = kernel.neighbor_size;
    let d_in = kernel.d_in;
    let gather = crate::conv::group_gather_table(group, k_g)?;
    let mut out = EquivariantFeatureMap::zeros(nbr.centers.clone(), n_g, kernel.d_out);
    let mut cost = ConvCost::default();
    let mut agg = vec![0.0; kp * k_g * d_in];
    let mut kappa = vec![0.0; kp];
    for m in 0..nbr.num_centers() {
        let center = nbr.centers[m];
        for g in 0..n_g {
            let rot = group.element(g);
            agg.iter_mut().for_each(|v| *v = 0.0);
            for &i in nbr.neighbors(m) {
                let local = rot.apply_inverse(center - features.coords[i]);
                for (p, y) in kernel.kernel_points.iter().enumerate() {
                    kappa[p] = correlation(local, *y, kernel.sigma, kernel.correlation);
                }
                for q in 0..k_g {
                    let f = features.at(i, gather[g * k_g + q]);
                    for p in 0..kp {
                        let c = kappa[p];
                        if c == 0.0 {
                            continue;
                        }
                        let a = &mut agg[(p * k_g + q) * d_in..(p * k_g + q + 1) * d_in];
                        for (av, fv) in a.iter_mut().zip(f) {
                            *av += c * fv;
                        }
                        cost.correlation_macs += d_in as u64;
                    }
                }
            }
            let o = out.offset(m, g);
            let dst = &mut out.values[o..o + kernel.d_out];
            for p in 0..kp {
                for q in 0..k_g {
                    matvec_acc(&agg[(p * k_g + q) * d_in..(p * k_g + q + 1) * d_in], kernel.weight(p, q), dst);
                }
            }
            cost.weight_macs += (kp * k_g * d_in * kernel.d_out) as u64;
        }
    }
    Ok((out, cost))
}
