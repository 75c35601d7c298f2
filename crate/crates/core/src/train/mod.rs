//! Parameters, optimizer, the toy network with analytic gradients, and the
//! desk-scale pose and classification experiments.

mod config;
mod gradcheck;
mod model;
mod opcheck;
mod optim;
mod params;
mod tasks;

pub use config::TrainConfig;
pub use gradcheck::{check_network_gradients, relative_error, GradCheckReport, GRADCHECK_FLOOR, GRADCHECK_STEP};
pub use model::{Head, HeadGrad, HeadKind, HeadOutput, Pooling, Target, ToyNetwork, Trace};
pub use opcheck::{check_operator_gradients, OpGradReport};
pub use optim::{adam_step, decayed_learning_rate, AdamConfig, AdamState, ADAM_EPS};
pub use params::{ParamArray, ParameterSet};
pub use tasks::{
    bar_triple, error_stats, invariance_audit, l_shape, toy_cls_task, toy_pose_task, train_pose, ClsReport, ClsVariantReport,
    ErrorStats, InvarianceAudit, PoseHeadReport, PoseReport, Trainer,
};

#[cfg(test)]
mod tests;
