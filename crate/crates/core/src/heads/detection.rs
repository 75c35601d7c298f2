use serde::Serialize;

use crate::error::{mismatch, Error, Result};
use crate::geom::{quaternion_from_rotation, quaternion_matrix, rotation_from_quaternion, Rotation, UnitQuaternion};
use crate::group::FiniteRotationGroup;
use crate::heads::{log_softmax, softmax};

/// Per-anchor classification logits and residual rotations. The residual at
/// anchor `g` maps `g` onto the predicted pose: `prediction = R(residual_g)·g`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    pub logits: Vec<f64>,
    pub residuals: Vec<UnitQuaternion>,
}

impl DetectionOutput {
    /// Builds the output from residuals expressed in each anchor's own frame
    /// (`|G| × 4` raw quaternions): the world residual is `g·R(q)·gᵀ`, so the
    /// prediction at anchor `g` is `g·R(q)`.
    pub fn from_local(logits: &[f64], local: &[f64], group: &FiniteRotationGroup) -> Result<Self> {
        check_shapes(logits, local, group)?;
        let residuals = group
            .elements()
            .iter()
            .zip(local.chunks_exact(4))
            .map(|(g, q)| {
                let r = Rotation(quaternion_matrix(raw_quaternion(q)?));
                quaternion_from_rotation(&(*g * r * g.transpose()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DetectionOutput {
            logits: logits.to_vec(),
            residuals,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionParts {
    /// Index of the anchor nearest the ground truth.
    pub label: usize,
    pub classification: f64,
    pub rotation: f64,
}

/// Loss and gradients of [`detection_loss_local`].
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGrad {
    pub loss: f64,
    pub parts: DetectionParts,
    pub d_logits: Vec<f64>,
    pub d_local: Vec<f64>,
}

fn check_shapes(logits: &[f64], local: &[f64], group: &FiniteRotationGroup) -> Result<()> {
    if logits.len() != group.order() || local.len() != 4 * group.order() {
        return Err(mismatch(
            "detection head",
            format!("{} logits and {} residual values for |G| = {}", logits.len(), local.len(), group.order()),
        ));
    }
    if logits.iter().chain(local).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("detection output"));
    }
    Ok(())
}

fn raw_quaternion(q: &[f64]) -> Result<[f64; 4]> {
    let n2: f64 = q.iter().map(|v| v * v).sum();
    if !(n2 > 1e-300) {
        return Err(Error::InvalidArgument("zero residual quaternion".into()));
    }
    Ok([q[0], q[1], q[2], q[3]])
}

fn frobenius_squared(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += (a[i][j] - b[i][j]).powi(2);
        }
    }
    s
}

/// Cross-entropy of the logits against the nearest anchor `u`, plus
/// `λ·‖R(residual_u)·g_u − R_gt‖²_F`.
pub fn detection_loss(
    out: &DetectionOutput,
    r_gt: &Rotation,
    group: &FiniteRotationGroup,
    lambda: f64,
) -> Result<(f64, DetectionParts)> {
    if out.logits.len() != group.order() || out.residuals.len() != group.order() {
        return Err(mismatch("detection_loss", "output size differs from |G|"));
    }
    let (label, _) = group.nearest_element(r_gt)?;
    let classification = -log_softmax(&out.logits)[label];
    let pred = rotation_from_quaternion(out.residuals[label])? * *group.element(label);
    let rotation = frobenius_squared(&pred.0, &r_gt.0);
    Ok((
        classification + lambda * rotation,
        DetectionParts {
            label,
            classification,
            rotation,
        },
    ))
}

/// `∂R(q)_{ij}/∂q_a` for the normalizing map `q ↦ R(q/‖q‖)`.
fn quaternion_matrix_grad(q: [f64; 4]) -> [[[f64; 4]; 3]; 3] {
    let [w, x, y, z] = q;
    let n = w * w + x * x + y * y + z * z;
    let s = 2.0 / n;
    let ds = q.map(|a| -4.0 * a / (n * n));
    let p = [
        [-(y * y + z * z), x * y - w * z, x * z + w * y],
        [x * y + w * z, -(x * x + z * z), y * z - w * x],
        [x * z - w * y, y * z + w * x, -(x * x + y * y)],
    ];
    let dp = [
        [[0.0, 0.0, -2.0 * y, -2.0 * z], [-z, y, x, -w], [y, z, w, x]],
        [[z, y, x, w], [0.0, -2.0 * x, 0.0, -2.0 * z], [-x, -w, z, y]],
        [[-y, z, -w, x], [x, w, z, y], [0.0, -2.0 * x, -2.0 * y, 0.0]],
    ];
    let mut out = [[[0.0; 4]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for a in 0..4 {
                out[i][j][a] = s * dp[i][j][a] + p[i][j] * ds[a];
            }
        }
    }
    out
}

/// Detection loss on raw head outputs with anchor-frame residuals (see
/// [`DetectionOutput::from_local`]), with gradients. Since
/// `‖g_u·R(q) − R_gt‖_F = ‖R(q) − g_uᵀR_gt‖_F`, only the residual at the
/// labelled anchor receives gradient.
pub fn detection_loss_local(
    logits: &[f64],
    local: &[f64],
    group: &FiniteRotationGroup,
    r_gt: &Rotation,
    lambda: f64,
) -> Result<DetectionGrad> {
    check_shapes(logits, local, group)?;
    let (label, _) = group.nearest_element(r_gt)?;
    let classification = -log_softmax(logits)[label];
    let mut d_logits = softmax(logits);
    d_logits[label] -= 1.0;

    let q = raw_quaternion(&local[4 * label..4 * label + 4])?;
    let target = (group.element(label).transpose() * *r_gt).0;
    let r = quaternion_matrix(q);
    let rotation = frobenius_squared(&r, &target);
    let dr = quaternion_matrix_grad(q);
    let mut d_local = vec![0.0; local.len()];
    for i in 0..3 {
        for j in 0..3 {
            let e = 2.0 * lambda * (r[i][j] - target[i][j]);
            for a in 0..4 {
                d_local[4 * label + a] += e * dr[i][j][a];
            }
        }
    }
    Ok(DetectionGrad {
        loss: classification + lambda * rotation,
        parts: DetectionParts {
            label,
            classification,
            rotation,
        },
        d_logits,
        d_local,
    })
}

/// `‖R(q) − R_gt‖²_F` for a raw 4-vector `q` and its gradient.
pub fn quaternion_regression_loss(q: &[f64], r_gt: &Rotation) -> Result<(f64, [f64; 4])> {
    if q.len() != 4 {
        return Err(mismatch("quaternion_regression_loss", "expected 4 values"));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quaternion"));
    }
    let q = raw_quaternion(q)?;
    let r = quaternion_matrix(q);
    let dr = quaternion_matrix_grad(q);
    let mut grad = [0.0; 4];
    for i in 0..3 {
        for j in 0..3 {
            let e = 2.0 * (r[i][j] - r_gt.0[i][j]);
            for a in 0..4 {
                grad[a] += e * dr[i][j][a];
            }
        }
    }
    Ok((frobenius_squared(&r, &r_gt.0), grad))
}

/// `R(residual_û)·g_û` for the highest-scoring anchor `û` (first on ties).
pub fn predict_rotation(out: &DetectionOutput, group: &FiniteRotationGroup) -> Result<Rotation> {
    if out.logits.len() != group.order() || out.residuals.len() != group.order() {
        return Err(mismatch("predict_rotation", "output size differs from |G|"));
    }
    let mut best = 0;
    for (i, &l) in out.logits.iter().enumerate() {
        if l > out.logits[best] {
            best = i;
        }
    }
    Ok(rotation_from_quaternion(out.residuals[best])? * *group.element(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{angular_distance, random_rotation, Vec3};
    use crate::group::GroupKind;
    use crate::testkit::random_values;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ico() -> FiniteRotationGroup {
        FiniteRotationGroup::build(GroupKind::Icosahedral).unwrap()
    }

    #[test]
    fn exact_prediction_has_negligible_loss() {
        let g = ico();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r_gt = random_rotation(&mut rng);
        let (u, res) = g.nearest_element(&r_gt).unwrap();
        let mut logits = vec![-20.0; 60];
        logits[u] = 20.0;
        let mut residuals = vec![UnitQuaternion::IDENTITY; 60];
        residuals[u] = quaternion_from_rotation(&res).unwrap();
        let out = DetectionOutput { logits, residuals };
        let (loss, parts) = detection_loss(&out, &r_gt, &g, 1.0).unwrap();
        assert_eq!(parts.label, u);
        assert!(loss < 1e-6, "{loss}");
        assert!(angular_distance(&predict_rotation(&out, &g).unwrap(), &r_gt).unwrap() < 1e-6);
    }

    #[test]
    fn uniform_logits_give_log_group_order() {
        let g = ico();
        let out = DetectionOutput {
            logits: vec![0.3; 60],
            residuals: vec![UnitQuaternion::IDENTITY; 60],
        };
        let (_, parts) = detection_loss(&out, g.element(17), &g, 1.0).unwrap();
        assert!((parts.classification - 60f64.ln()).abs() < 1e-12);
        assert!((parts.classification - 4.0943445622).abs() < 1e-9);
        assert!(parts.rotation < 1e-20);
    }

    #[test]
    fn prediction_examples() {
        let g = ico();
        let mut logits = vec![0.0; 60];
        logits[23] = 5.0;
        let mut out = DetectionOutput {
            logits,
            residuals: vec![UnitQuaternion::IDENTITY; 60],
        };
        assert!(predict_rotation(&out, &g).unwrap().max_abs_diff(g.element(23)) < 1e-15);
        let five = UnitQuaternion::from_axis_angle(Vec3::new(0.3, -1.0, 0.2), 5f64.to_radians()).unwrap();
        out.residuals[23] = five;
        let err = angular_distance(&predict_rotation(&out, &g).unwrap(), g.element(23)).unwrap();
        assert!((err - 5.0).abs() < 1e-9);
        let shifted = DetectionOutput {
            logits: out.logits.iter().map(|l| l + 100.0).collect(),
            ..out.clone()
        };
        assert_eq!(predict_rotation(&shifted, &g).unwrap(), predict_rotation(&out, &g).unwrap());
    }

    #[test]
    fn quaternion_regression_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r_gt = random_rotation(&mut rng);
        let q = [0.9, -0.3, 0.2, 0.5];
        let (_, g) = quaternion_regression_loss(&q, &r_gt).unwrap();
        let h = 1e-6;
        for a in 0..4 {
            let (mut p, mut m) = (q, q);
            p[a] += h;
            m[a] -= h;
            let n = (quaternion_regression_loss(&p, &r_gt).unwrap().0 - quaternion_regression_loss(&m, &r_gt).unwrap().0)
                / (2.0 * h);
            assert!((n - g[a]).abs() / n.abs().max(g[a].abs()).max(1e-5) < 1e-4);
        }
        let exact = quaternion_from_rotation(&r_gt).unwrap().to_array();
        assert!(quaternion_regression_loss(&exact, &r_gt).unwrap().0 < 1e-28);
    }

    #[test]
    fn local_loss_matches_world_loss_and_gradients() {
        let g = ico();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = random_values(60, 3);
        let local: Vec<f64> = random_values(240, 4)
            .chunks(4)
            .flat_map(|q| [1.0 + 0.3 * q[0], 0.3 * q[1], 0.3 * q[2], 0.3 * q[3]])
            .collect();
        for _ in 0..5 {
            let r_gt = random_rotation(&mut rng);
            let lambda = 0.7;
            let grad = detection_loss_local(&logits, &local, &g, &r_gt, lambda).unwrap();
            let out = DetectionOutput::from_local(&logits, &local, &g).unwrap();
            let (loss, parts) = detection_loss(&out, &r_gt, &g, lambda).unwrap();
            assert_eq!(parts.label, grad.parts.label);
            assert!((loss - grad.loss).abs() < 1e-12);

            let h = 1e-6;
            let world = |l: &[f64]| {
                let out = DetectionOutput { logits: l.to_vec(), ..out.clone() };
                detection_loss(&out, &r_gt, &g, lambda).unwrap().0
            };
            for i in 0..60 {
                let (mut p, mut m) = (logits.clone(), logits.clone());
                p[i] += h;
                m[i] -= h;
                let n = (world(&p) - world(&m)) / (2.0 * h);
                let a = grad.d_logits[i];
                assert!((n - a).abs() / n.abs().max(a.abs()).max(1e-5) < 1e-4);
            }
            let raw = |q: &[f64]| detection_loss_local(&logits, q, &g, &r_gt, lambda).unwrap().loss;
            for i in 4 * parts.label..4 * parts.label + 4 {
                let (mut p, mut m) = (local.clone(), local.clone());
                p[i] += h;
                m[i] -= h;
                let n = (raw(&p) - raw(&m)) / (2.0 * h);
                let a = grad.d_local[i];
                assert!((n - a).abs() / n.abs().max(a.abs()).max(1e-5) < 1e-4, "{n} {a}");
            }
        }
    }
}
