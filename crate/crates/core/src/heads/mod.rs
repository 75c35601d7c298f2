//! Invariant pooling over the group axis, the rotation-detection head and
//! the training losses.
//!
//! Group-axis features are passed as `|G| × D` row-major slices.

mod detection;
mod losses;
mod mlp;
mod pooling;

pub use detection::{
    detection_loss, detection_loss_local, predict_rotation, quaternion_regression_loss, DetectionGrad, DetectionOutput, DetectionParts,
};
pub use losses::{
    batch_hard_triplet, batch_hard_triplet_grad, classify, combined_loss, cross_entropy, cross_entropy_grad,
    TripletGrad,
};
pub use mlp::{AnchorMlp, AnchorMlpCache, AnchorMlpGrads, Linear, LinearGrads};
pub use pooling::{
    ga_pooling, ga_pooling_backward, log_softmax, pool_max, pool_max_backward, pool_mean, pool_mean_backward,
    softmax, softmax_backward, AttentionVector,
};

use crate::error::{mismatch, Result};

/// Number of channels in a `|G| × D` slice.
pub(crate) fn channels_of(op: &'static str, features: &[f64], group_order: usize) -> Result<usize> {
    if group_order == 0 || features.is_empty() || features.len() % group_order != 0 {
        return Err(mismatch(op, format!("{} values for |G| = {group_order}", features.len())));
    }
    Ok(features.len() / group_order)
}
