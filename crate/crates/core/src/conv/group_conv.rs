use crate::conv::{matvec_acc, matvec_t_acc, outer_acc, ConvCost, EquivariantFeatureMap};
use crate::error::{mismatch, Error, Result};
use crate::group::FiniteRotationGroup;

/// Weights `W_j` for the `K_g` group elements nearest the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupKernel {
    pub neighbor_size: usize,
    /// `K_g × D_in × D_out`, row-major.
    pub weights: Vec<f64>,
    pub d_in: usize,
    pub d_out: usize,
}

impl GroupKernel {
    pub fn new(neighbor_size: usize, weights: Vec<f64>, d_in: usize, d_out: usize) -> Result<Self> {
        if neighbor_size == 0 {
            return Err(Error::InvalidArgument("group kernel needs K_g ≥ 1".into()));
        }
        if weights.len() != neighbor_size * d_in * d_out {
            return Err(mismatch(
                "group kernel",
                format!("{} weights for {neighbor_size} × {d_in} × {d_out}", weights.len()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("group kernel weights"));
        }
        Ok(GroupKernel {
            neighbor_size,
            weights,
            d_in,
            d_out,
        })
    }

    pub fn weight(&self, j: usize) -> &[f64] {
        let s = self.d_in * self.d_out;
        &self.weights[j * s..(j + 1) * s]
    }
}

/// `table[g·K_g + j]` = index of `g · n_j⁻¹` where `n_j` are the `K_g`
/// elements nearest the identity. Precomputed once so the convolution is a
/// gather followed by weight products.
pub fn group_gather_table(group: &FiniteRotationGroup, k_g: usize) -> Result<Vec<usize>> {
    let nbrs = group.identity_neighbors(k_g)?;
    let mut table = Vec::with_capacity(group.order() * k_g);
    for g in 0..group.order() {
        for &n in nbrs {
            table.push(group.mul(g, group.inv(n)));
        }
    }
    Ok(table)
}

/// SE(3) group convolution:
///
/// `out(x, g) = Σ_{j < K_g} F(x, g·n_j⁻¹) W_j`
///
/// which is `Σ_{h ∈ G} F(x, h) w(h⁻¹g)` for a kernel `w` supported on the
/// identity neighborhood, and commutes with left translations of the group
/// axis.
pub fn se3_group_conv(
    features: &EquivariantFeatureMap,
    kernel: &GroupKernel,
    group: &FiniteRotationGroup,
) -> Result<EquivariantFeatureMap> {
    let gather = group_gather_table(group, kernel.neighbor_size)?;
    group_conv_forward(features, kernel, &gather, None)
}

pub fn group_conv_forward(
    features: &EquivariantFeatureMap,
    kernel: &GroupKernel,
    gather: &[usize],
    cost: Option<&mut ConvCost>,
) -> Result<EquivariantFeatureMap> {
    let n_g = features.group_order;
    let k_g = kernel.neighbor_size;
    if gather.len() != n_g * k_g {
        return Err(mismatch(
            "se3_group_conv",
            format!("gather table has {} entries, expected {}", gather.len(), n_g * k_g),
        ));
    }
    if features.channels != kernel.d_in {
        return Err(mismatch(
            "se3_group_conv",
            format!("features have D = {}, kernel expects {}", features.channels, kernel.d_in),
        ));
    }
    let mut out = EquivariantFeatureMap::zeros(features.coords.clone(), n_g, kernel.d_out);
    for x in 0..features.num_points() {
        for g in 0..n_g {
            let o = out.offset(x, g);
            let dst = &mut out.values[o..o + kernel.d_out];
            for j in 0..k_g {
                matvec_acc(features.at(x, gather[g * k_g + j]), kernel.weight(j), dst);
            }
        }
    }
    if let Some(c) = cost {
        c.weight_macs += (features.num_points() * n_g * k_g * kernel.d_in * kernel.d_out) as u64;
    }
    Ok(out)
}

/// Returns `(∂L/∂F, ∂L/∂W)`.
pub fn group_conv_backward(
    features: &EquivariantFeatureMap,
    kernel: &GroupKernel,
    gather: &[usize],
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n_g = features.group_order;
    let k_g = kernel.neighbor_size;
    let (d_in, dout) = (kernel.d_in, kernel.d_out);
    let wsize = d_in * dout;
    let mut d_features = vec![0.0; features.values.len()];
    let mut d_weights = vec![0.0; kernel.weights.len()];
    for x in 0..features.num_points() {
        for g in 0..n_g {
            let cell = x * n_g + g;
            let dy = &d_out[cell * dout..(cell + 1) * dout];
            for j in 0..k_g {
                let src = gather[g * k_g + j];
                outer_acc(features.at(x, src), dy, &mut d_weights[j * wsize..(j + 1) * wsize]);
                let o = features.offset(x, src);
                matvec_t_acc(kernel.weight(j), dy, &mut d_features[o..o + d_in]);
            }
        }
    }
    (d_features, d_weights)
}
