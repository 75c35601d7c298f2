use serde::Serialize;

use crate::conv::NormMode;
use crate::error::Result;
use crate::sampling::PointCloud;
use crate::train::{HeadGrad, Target, ToyNetwork, Trace};

pub const GRADCHECK_STEP: f64 = 1e-6;
/// Lower bound on the denominator of [`relative_error`], so that gradients
/// that vanish analytically are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose ±step perturbation changes an activation sign or a
    /// max-pool winner.
    pub excluded: usize,
    pub max_rel_err: f64,
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tolerance
    }
}

fn batch_loss(net: &ToyNetwork, trace: &Trace, batch: &[(PointCloud, Target)], lambda: f64) -> Result<(f64, Vec<HeadGrad>)> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (out, (_, target)) in trace.outputs.iter().zip(batch) {
        let (l, g) = net.loss(out, target, lambda)?;
        total += l;
        grads.push(g);
    }
    Ok((total, grads))
}

/// Compares the analytic gradient of the summed training-mode loss of a
/// batch with central differences for every trainable parameter.
pub fn check_network_gradients(
    net: &ToyNetwork,
    batch: &[(PointCloud, Target)],
    lambda: f64,
) -> Result<GradCheckReport> {
    let clouds: Vec<PointCloud> = batch.iter().map(|b| b.0.clone()).collect();
    let trace = net.forward_batch(&clouds, NormMode::Train, true)?;
    let (_, d_out) = batch_loss(net, &trace, batch, lambda)?;
    let analytic = net.backward(&trace, &d_out)?;
    let base_sig = net.kink_signature(&trace)?;
    let params = net.parameters();

    let eval = |p: &crate::train::ParameterSet| -> Result<(f64, Vec<u32>)> {
        let mut probe = net.clone();
        probe.load(p)?;
        let t = probe.forward_batch(&clouds, NormMode::Train, true)?;
        let (l, _) = batch_loss(&probe, &t, batch, lambda)?;
        Ok((l, probe.kink_signature(&t)?))
    };

    let mut report = GradCheckReport {
        checked: 0,
        excluded: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = params.clone();
    for (ai, array) in params.arrays().iter().enumerate() {
        for (vi, &v) in array.values.iter().enumerate() {
            probe.arrays_mut()[ai].values[vi] = v + GRADCHECK_STEP;
            let (up, sig_up) = eval(&probe)?;
            probe.arrays_mut()[ai].values[vi] = v - GRADCHECK_STEP;
            let (down, sig_down) = eval(&probe)?;
            probe.arrays_mut()[ai].values[vi] = v;
            if sig_up != base_sig || sig_down != base_sig {
                report.excluded += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let a = analytic.arrays()[ai].values[vi];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some(format!("{}[{vi}]: analytic {a:e}, numeric {numeric:e}", array.name));
                }
            }
        }
    }
    Ok(report)
}
