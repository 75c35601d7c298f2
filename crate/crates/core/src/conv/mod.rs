//! SE(3) separable convolution operators on group-lifted point features.
//!
//! A feature map assigns a `D`-vector to every pair (point, group element).
//! The group acts on a map by rotating the coordinates and reindexing the
//! group axis with a left-translation permutation; every operator here
//! commutes with that action and with translations.

mod block;
mod group_conv;
mod implicit;
mod interp;
mod kernel;
mod naive;
mod norm;
mod point;

pub use block::{spconv_block, SpconvBlock, SpconvCache, SpconvGrads};
pub use group_conv::{
    group_conv_backward, group_conv_forward, group_gather_table, se3_group_conv, GroupKernel,
};
pub use implicit::{
    implicit_conv_backward, implicit_conv_forward, implicit_point_conv, ImplicitKernelParams,
};
pub use interp::{spherical_interpolate, spherical_interpolate_backward, spherical_interpolation_weights};
pub use kernel::{correlation, make_kernel_points, Correlation, ExplicitKernel};
pub use naive::{naive_se3_conv, naive_se3_conv_with_cost, Kernel6d};
pub use norm::{
    batch_norm_backward, batch_norm_forward, leaky_relu, leaky_relu_backward, BatchNorm,
    BatchNormCache, NormMode, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE,
};
pub use point::{point_conv_backward, point_conv_forward, se3_point_conv, PointConvCache};

use std::ops::AddAssign;

use serde::Serialize;

use crate::error::{mismatch, Error, Result};
use crate::geom::{Rotation, Vec3};

/// Features `F(x_i, g_j)` stored as an `N × |G| × D` array.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivariantFeatureMap {
    pub coords: Vec<Vec3>,
    pub values: Vec<f64>,
    pub group_order: usize,
    pub channels: usize,
}

impl EquivariantFeatureMap {
    pub fn new(coords: Vec<Vec3>, group_order: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || group_order == 0 {
            return Err(Error::InvalidArgument("feature map needs D ≥ 1 and |G| ≥ 1".into()));
        }
        if values.len() != coords.len() * group_order * channels {
            return Err(mismatch(
                "feature map",
                format!(
                    "{} values for {} points × {group_order} × {channels}",
                    values.len(),
                    coords.len()
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(EquivariantFeatureMap {
            coords,
            values,
            group_order,
            channels,
        })
    }

    /// `F(x, g) = 1` for every point and group element.
    pub fn ones(coords: Vec<Vec3>, group_order: usize) -> Self {
        let values = vec![1.0; coords.len() * group_order];
        EquivariantFeatureMap {
            coords,
            values,
            group_order,
            channels: 1,
        }
    }

    pub fn zeros(coords: Vec<Vec3>, group_order: usize, channels: usize) -> Self {
        let values = vec![0.0; coords.len() * group_order * channels];
        EquivariantFeatureMap {
            coords,
            values,
            group_order,
            channels,
        }
    }

    pub fn num_points(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn offset(&self, point: usize, g: usize) -> usize {
        (point * self.group_order + g) * self.channels
    }

    #[inline]
    pub fn at(&self, point: usize, g: usize) -> &[f64] {
        let o = self.offset(point, g);
        &self.values[o..o + self.channels]
    }

    #[inline]
    pub fn at_mut(&mut self, point: usize, g: usize) -> &mut [f64] {
        let o = self.offset(point, g);
        let d = self.channels;
        &mut self.values[o..o + d]
    }

    /// `out(i, j) = self(i, perm[j])`. With `perm` from
    /// `left_translation_permutation(r)` this is the group-axis half of
    /// the action of `r`.
    pub fn permute_group_axis(&self, perm: &[usize]) -> EquivariantFeatureMap {
        assert_eq!(perm.len(), self.group_order);
        let mut out = self.clone();
        for i in 0..self.num_points() {
            for (j, &p) in perm.iter().enumerate() {
                out.at_mut(i, j).copy_from_slice(self.at(i, p));
            }
        }
        out
    }

    /// Full action of a group element: rotate coordinates, permute the group axis.
    pub fn act(&self, r: &Rotation, perm: &[usize]) -> EquivariantFeatureMap {
        let mut out = self.permute_group_axis(perm);
        out.coords = self.coords.iter().map(|p| r.apply(*p)).collect();
        out
    }

    pub fn translated(&self, t: Vec3) -> EquivariantFeatureMap {
        let mut out = self.clone();
        out.coords = self.coords.iter().map(|p| *p + t).collect();
        out
    }

    pub fn max_abs_diff(&self, other: &EquivariantFeatureMap) -> f64 {
        max_abs_diff(&self.values, &other.values)
    }

    pub(crate) fn check_group(&self, op: &'static str, order: usize) -> Result<()> {
        if self.group_order != order {
            return Err(mismatch(
                op,
                format!("feature map has |G| = {}, group has {order}", self.group_order),
            ));
        }
        Ok(())
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

/// Multiply-accumulate counts gathered by instrumented forward passes.
///
/// `weight_macs` counts channel-mixing products against weight matrices
/// (the `C = C_in·C_out` term of the complexity analysis);
/// `correlation_macs` counts the neighbor aggregation that precedes it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConvCost {
    pub weight_macs: u64,
    pub correlation_macs: u64,
}

impl AddAssign for ConvCost {
    fn add_assign(&mut self, o: ConvCost) {
        self.weight_macs += o.weight_macs;
        self.correlation_macs += o.correlation_macs;
    }
}

/// `out[o] += Σ_c a[c]·w[c, o]` with `w` row-major `a.len() × out.len()`.
#[inline]
pub(crate) fn matvec_acc(a: &[f64], w: &[f64], out: &mut [f64]) {
    let dout = out.len();
    for (c, &ac) in a.iter().enumerate() {
        if ac == 0.0 {
            continue;
        }
        let row = &w[c * dout..(c + 1) * dout];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += ac * wv;
        }
    }
}

/// `da[c] += Σ_o w[c, o]·dy[o]`.
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], dy: &[f64], da: &mut [f64]) {
    let dout = dy.len();
    for (c, d) in da.iter_mut().enumerate() {
        let row = &w[c * dout..(c + 1) * dout];
        let mut s = 0.0;
        for (wv, g) in row.iter().zip(dy) {
            s += wv * g;
        }
        *d += s;
    }
}

/// `dw[c, o] += a[c]·dy[o]`.
#[inline]
pub(crate) fn outer_acc(a: &[f64], dy: &[f64], dw: &mut [f64]) {
    let dout = dy.len();
    for (c, &ac) in a.iter().enumerate() {
        if ac == 0.0 {
            continue;
        }
        let row = &mut dw[c * dout..(c + 1) * dout];
        for (w, g) in row.iter_mut().zip(dy) {
            *w += ac * g;
        }
    }
}
