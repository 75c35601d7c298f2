use crate::conv::{
    batch_norm_backward, batch_norm_forward, group_conv_backward, group_conv_forward, group_gather_table,
    leaky_relu, leaky_relu_backward, point_conv_backward, point_conv_forward, BatchNorm, BatchNormCache,
    ConvCost, EquivariantFeatureMap, ExplicitKernel, GroupKernel, NormMode, PointConvCache,
};
use crate::error::{Error, Result};
use crate::group::FiniteRotationGroup;
use crate::sampling::NeighborhoodTable;

/// Point conv, BN, leaky ReLU, group conv, BN, leaky ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct SpconvBlock {
    pub point: ExplicitKernel,
    pub group: GroupKernel,
    pub bn1: BatchNorm,
    pub bn2: BatchNorm,
}

/// Intermediates kept by [`SpconvBlock::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct SpconvCache {
    pub point: PointConvCache,
    pub bn1: BatchNormCache,
    /// Input of the first activation.
    pub pre1: Vec<f64>,
    /// Output of the first activation, input of the group conv.
    pub hidden: EquivariantFeatureMap,
    pub bn2: BatchNormCache,
    /// Input of the second activation.
    pub pre2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpconvGrads {
    pub point: Vec<f64>,
    pub group: Vec<f64>,
    pub bn1_gamma: Vec<f64>,
    pub bn1_beta: Vec<f64>,
    pub bn2_gamma: Vec<f64>,
    pub bn2_beta: Vec<f64>,
}

impl SpconvBlock {
    pub fn forward(
        &self,
        features: &EquivariantFeatureMap,
        nbr: &NeighborhoodTable,
        group: &FiniteRotationGroup,
        gather: &[usize],
        mode: NormMode,
        mut cost: Option<&mut ConvCost>,
    ) -> Result<(EquivariantFeatureMap, SpconvCache)> {
        if features.num_points() == 0 || nbr.num_centers() == 0 {
            return Err(Error::InvalidArgument("spconv block on an empty batch".into()));
        }
        let (mut x, point) = point_conv_forward(features, &self.point, nbr, group, cost.as_deref_mut())?;
        let (pre1, bn1) = batch_norm_forward(&x.values, &self.bn1, mode)?;
        x.values = leaky_relu(&pre1);
        let hidden = x;
        let mut y = group_conv_forward(&hidden, &self.group, gather, cost)?;
        let (pre2, bn2) = batch_norm_forward(&y.values, &self.bn2, mode)?;
        y.values = leaky_relu(&pre2);
        Ok((
            y,
            SpconvCache {
                point,
                bn1,
                pre1,
                hidden,
                bn2,
                pre2,
            },
        ))
    }

    /// Returns `∂L/∂F` for the block input and the parameter gradients.
    pub fn backward(
        &self,
        features: &EquivariantFeatureMap,
        nbr: &NeighborhoodTable,
        gather: &[usize],
        cache: &SpconvCache,
        d_out: &[f64],
    ) -> (Vec<f64>, SpconvGrads) {
        let d = leaky_relu_backward(&cache.pre2, d_out);
        let (d, bn2_gamma, bn2_beta) = batch_norm_backward(&self.bn2, &cache.bn2, &d);
        let (d, group) = group_conv_backward(&cache.hidden, &self.group, gather, &d);
        let d = leaky_relu_backward(&cache.pre1, &d);
        let (d, bn1_gamma, bn1_beta) = batch_norm_backward(&self.bn1, &cache.bn1, &d);
        let (d_features, point) = point_conv_backward(features, &self.point, nbr, &cache.point, &d);
        (
            d_features,
            SpconvGrads {
                point,
                group,
                bn1_gamma,
                bn1_beta,
                bn2_gamma,
                bn2_beta,
            },
        )
    }
}

pub fn spconv_block(
    features: &EquivariantFeatureMap,
    block: &SpconvBlock,
    nbr: &NeighborhoodTable,
    group: &FiniteRotationGroup,
    mode: NormMode,
) -> Result<EquivariantFeatureMap> {
    let gather = group_gather_table(group, block.group.neighbor_size)?;
    block.forward(features, nbr, group, &gather, mode, None).map(|(out, _)| out)
}
