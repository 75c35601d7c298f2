use crate::conv::{matvec_acc, matvec_t_acc, outer_acc, ConvCost, EquivariantFeatureMap, ExplicitKernel};
use crate::conv::kernel::correlation;
use crate::error::{mismatch, Result};
use crate::geom::Vec3;
use crate::group::FiniteRotationGroup;
use crate::sampling::NeighborhoodTable;

/// Forward intermediates of [`point_conv_forward`].
#[derive(Debug, Clone)]
pub struct PointConvCache {
    /// `M × |G| × K_max × K` correlations (zero on shadow slots).
    pub kappa: Vec<f64>,
    /// `M × |G| × K × D_in` kernel-point aggregates.
    pub agg: Vec<f64>,
}

/// SE(3) point convolution with an explicit kernel:
///
/// `out(x_m, g) = Σ_{x_i ∈ N(x_m)} F(x_i, g) · Σ_k κ(g⁻¹(x_m − x_i), ỹ_k) W_k`
pub fn se3_point_conv(
    features: &EquivariantFeatureMap,
    kernel: &ExplicitKernel,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
) -> Result<EquivariantFeatureMap> {
    point_conv_forward(features, kernel, nbr, group, None).map(|(out, _)| out)
}

fn check(
    features: &EquivariantFeatureMap,
    kernel: &ExplicitKernel,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
) -> Result<()> {
    features.check_group("se3_point_conv", group.order())?;
    if features.channels != kernel.d_in {
        return Err(mismatch(
            "se3_point_conv",
            format!("features have D = {}, kernel expects {}", features.channels, kernel.d_in),
        ));
    }
    if nbr.source_len != features.num_points() {
        return Err(mismatch(
            "se3_point_conv",
            format!(
                "neighborhoods index {} source points, features have {}",
                nbr.source_len,
                features.num_points()
            ),
        ));
    }
    Ok(())
}

pub fn point_conv_forward(
    features: &EquivariantFeatureMap,
    kernel: &ExplicitKernel,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
    cost: Option<&mut ConvCost>,
) -> Result<(EquivariantFeatureMap, PointConvCache)> {
    check(features, kernel, nbr, group)?;
    let n_g = group.order();
    let kp = kernel.num_points();
    let (d_in, d_out) = (kernel.d_in, kernel.d_out);
    let m_count = nbr.num_centers();
    let k_max = nbr.k_max;

    // κ(g⁻¹d, ỹ) = κ(d, gỹ): rotate the kernel points once per group element.
    let rotated: Vec<Vec3> = group
        .elements()
        .iter()
        .flat_map(|g| kernel.kernel_points.iter().map(move |y| g.apply(*y)))
        .collect();

    let mut out = EquivariantFeatureMap::zeros(nbr.centers.clone(), n_g, d_out);
    let mut kappa = vec![0.0; m_count * n_g * k_max * kp];
    let mut agg = vec![0.0; m_count * n_g * kp * d_in];
    let mut local = ConvCost::default();

    for m in 0..m_count {
        let center = nbr.centers[m];
        let row = nbr.row(m);
        for g in 0..n_g {
            let cell = m * n_g + g;
            let kap = &mut kappa[cell * k_max * kp..(cell + 1) * k_max * kp];
            let acc = &mut agg[cell * kp * d_in..(cell + 1) * kp * d_in];
            let rk = &rotated[g * kp..(g + 1) * kp];
            for (slot, &i) in row.iter().enumerate() {
                if nbr.is_shadow(i) {
                    continue;
                }
                let d = center - features.coords[i];
                let f = features.at(i, g);
                for k in 0..kp {
                    let c = correlation(d, rk[k], kernel.sigma, kernel.correlation);
                    kap[slot * kp + k] = c;
                    if c != 0.0 {
                        let a = &mut acc[k * d_in..(k + 1) * d_in];
                        for (av, fv) in a.iter_mut().zip(f) {
                            *av += c * fv;
                        }
                        local.correlation_macs += d_in as u64;
                    }
                }
            }
            let o = out.at_mut(m, g);
            for k in 0..kp {
                matvec_acc(&acc[k * d_in..(k + 1) * d_in], kernel.weight(k), o);
            }
            local.weight_macs += (kp * d_in * d_out) as u64;
        }
    }
    if let Some(c) = cost {
        *c += local;
    }
    Ok((out, PointConvCache { kappa, agg }))
}

/// Returns `(∂L/∂F, ∂L/∂W)` given `∂L/∂out`.
pub fn point_conv_backward(
    features: &EquivariantFeatureMap,
    kernel: &ExplicitKernel,
    nbr: &NeighborhoodTable,
    cache: &PointConvCache,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n_g = features.group_order;
    let kp = kernel.num_points();
    let (d_in, dout) = (kernel.d_in, kernel.d_out);
    let k_max = nbr.k_max;
    let mut d_features = vec![0.0; features.values.len()];
    let mut d_weights = vec![0.0; kernel.weights.len()];
    let mut d_agg = vec![0.0; kp * d_in];
    let wsize = d_in * dout;
    for m in 0..nbr.num_centers() {
        let row = nbr.row(m);
        for g in 0..n_g {
            let cell = m * n_g + g;
            let dy = &d_out[cell * dout..(cell + 1) * dout];
            let acc = &cache.agg[cell * kp * d_in..(cell + 1) * kp * d_in];
            d_agg.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..kp {
                outer_acc(
                    &acc[k * d_in..(k + 1) * d_in],
                    dy,
                    &mut d_weights[k * wsize..(k + 1) * wsize],
                );
                matvec_t_acc(kernel.weight(k), dy, &mut d_agg[k * d_in..(k + 1) * d_in]);
            }
            let kap = &cache.kappa[cell * k_max * kp..(cell + 1) * k_max * kp];
            for (slot, &i) in row.iter().enumerate() {
                if nbr.is_shadow(i) {
                    continue;
                }
                let o = features.offset(i, g);
                let df = &mut d_features[o..o + d_in];
                for k in 0..kp {
                    let c = kap[slot * kp + k];
                    if c != 0.0 {
                        for (dv, av) in df.iter_mut().zip(&d_agg[k * d_in..(k + 1) * d_in]) {
                            *dv += c * av;
                        }
                    }
                }
            }
        }
    }
    (d_features, d_weights)
}
