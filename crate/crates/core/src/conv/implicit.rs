use crate::conv::{matvec_acc, matvec_t_acc, outer_acc, EquivariantFeatureMap};
use crate::error::{mismatch, Error, Result};
use crate::group::FiniteRotationGroup;
use crate::sampling::NeighborhoodTable;

/// A single `(D_in + 3) × D_out` matrix applied to features concatenated
/// with frame-local relative coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitKernelParams {
    pub weights: Vec<f64>,
    pub d_in: usize,
    pub d_out: usize,
}

impl ImplicitKernelParams {
    pub fn new(weights: Vec<f64>, d_in: usize, d_out: usize) -> Result<Self> {
        if weights.len() != (d_in + 3) * d_out {
            return Err(mismatch(
                "implicit kernel",
                format!("{} weights for ({d_in} + 3) × {d_out}", weights.len()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("implicit kernel weights"));
        }
        Ok(ImplicitKernelParams { weights, d_in, d_out })
    }
}

/// `out(x, g) = Σ_{x_i ∈ N(x)} [F(x_i, g) ; g⁻¹(x_i − x)] · W`
pub fn implicit_point_conv(
    features: &EquivariantFeatureMap,
    params: &ImplicitKernelParams,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
) -> Result<EquivariantFeatureMap> {
    implicit_conv_forward(features, params, nbr, group)
}

pub fn implicit_conv_forward(
    features: &EquivariantFeatureMap,
    params: &ImplicitKernelParams,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
) -> Result<EquivariantFeatureMap> {
    features.check_group("implicit_point_conv", group.order())?;
    if features.channels != params.d_in {
        return Err(mismatch(
            "implicit_point_conv",
            format!("features have D = {}, kernel expects {}", features.channels, params.d_in),
        ));
    }
    if nbr.source_len != features.num_points() {
        return Err(mismatch("implicit_point_conv", "neighborhood source size differs from features"));
    }
    let n_g = group.order();
    let d_in = params.d_in;
    let mut out = EquivariantFeatureMap::zeros(nbr.centers.clone(), n_g, params.d_out);
    let mut row_in = vec![0.0; d_in + 3];
    for m in 0..nbr.num_centers() {
        let center = nbr.centers[m];
        for g in 0..n_g {
            let rot = group.element(g);
            let o = out.offset(m, g);
            let dst = &mut out.values[o..o + params.d_out];
            for &i in nbr.neighbors(m) {
                row_in[..d_in].copy_from_slice(features.at(i, g));
                let local = rot.apply_inverse(features.coords[i] - center);
                row_in[d_in..].copy_from_slice(&local.to_array());
                matvec_acc(&row_in, &params.weights, dst);
            }
        }
    }
    Ok(out)
}

/// Returns `(∂L/∂F, ∂L/∂W)`.
pub fn implicit_conv_backward(
    features: &EquivariantFeatureMap,
    params: &ImplicitKernelParams,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n_g = group.order();
    let (d_in, dout) = (params.d_in, params.d_out);
    let mut d_features = vec![0.0; features.values.len()];
    let mut d_weights = vec![0.0; params.weights.len()];
    let mut row_in = vec![0.0; d_in + 3];
    let mut d_row = vec![0.0; d_in + 3];
    for m in 0..nbr.num_centers() {
        let center = nbr.centers[m];
        for g in 0..n_g {
            let rot = group.element(g);
            let cell = m * n_g + g;
            let dy = &d_out[cell * dout..(cell + 1) * dout];
            for &i in nbr.neighbors(m) {
                row_in[..d_in].copy_from_slice(features.at(i, g));
                let local = rot.apply_inverse(features.coords[i] - center);
                row_in[d_in..].copy_from_slice(&local.to_array());
                outer_acc(&row_in, dy, &mut d_weights);
                d_row.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_acc(&params.weights, dy, &mut d_row);
                let o = features.offset(i, g);
                for (dv, r) in d_features[o..o + d_in].iter_mut().zip(&d_row[..d_in]) {
                    *dv += r;
                }
            }
        }
    }
    (d_features, d_weights)
}
