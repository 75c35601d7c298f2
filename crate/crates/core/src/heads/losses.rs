use crate::error::{mismatch, Error, Result};
use crate::heads::{log_softmax, softmax, Linear};

pub fn classify(pooled: &[f64], fc: &Linear) -> Result<Vec<f64>> {
    if pooled.len() != fc.d_in {
        return Err(mismatch("classify", format!("{} features for a {}-input layer", pooled.len(), fc.d_in)));
    }
    fc.forward(pooled)
}

pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    cross_entropy_grad(logits, label).map(|(l, _)| l)
}

/// Softmax cross-entropy and its gradient `softmax − onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let loss = -log_softmax(logits)[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// `L_task + λ·L_sa` where `L_sa` is the cross-entropy of the attention
/// logits against the supervised anchor, when one is given. Returns the
/// total and `∂/∂(attention logits)`.
pub fn combined_loss(
    task_loss: f64,
    attention_logits: &[f64],
    anchor: Option<usize>,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    match anchor {
        None => Ok((task_loss, vec![0.0; attention_logits.len()])),
        Some(u) => {
            let (l_sa, g) = cross_entropy_grad(attention_logits, u)?;
            Ok((task_loss + lambda * l_sa, g.into_iter().map(|v| lambda * v).collect()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub d_anchors: Vec<f64>,
    pub d_positives: Vec<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `(1/B) Σ_i max(0, ‖a_i − p_i‖ − min_{j≠i} ‖a_i − p_j‖ + m)` over rows of
/// length `d`.
pub fn batch_hard_triplet(anchors: &[f64], positives: &[f64], d: usize, margin: f64) -> Result<f64> {
    batch_hard_triplet_grad(anchors, positives, d, margin).map(|g| g.loss)
}

pub fn batch_hard_triplet_grad(anchors: &[f64], positives: &[f64], d: usize, margin: f64) -> Result<TripletGrad> {
    if d == 0 || anchors.len() != positives.len() || anchors.len() % d != 0 {
        return Err(mismatch("batch_hard_triplet", "anchor and positive batches differ"));
    }
    let b = anchors.len() / d;
    if b < 2 {
        return Err(Error::InvalidArgument("batch-hard triplet loss needs at least two pairs".into()));
    }
    let row = |i: usize| i * d..(i + 1) * d;
    let mut loss = 0.0;
    let mut d_anchors = vec![0.0; anchors.len()];
    let mut d_positives = vec![0.0; positives.len()];
    // Unit direction from `q` to `p`, zero when they coincide.
    let direction = |p: &[f64], q: &[f64], dist: f64| -> Vec<f64> {
        if dist > 0.0 {
            p.iter().zip(q).map(|(x, y)| (x - y) / dist).collect()
        } else {
            vec![0.0; d]
        }
    };
    for i in 0..b {
        let a = &anchors[row(i)];
        let p = &positives[row(i)];
        let pos = distance(a, p);
        let mut neg = f64::INFINITY;
        let mut hardest = 0;
        for j in (0..b).filter(|&j| j != i) {
            let dj = distance(a, &positives[row(j)]);
            if dj < neg {
                neg = dj;
                hardest = j;
            }
        }
        let hinge = pos - neg + margin;
        if hinge > 0.0 {
            loss += hinge;
            let up = direction(a, p, pos);
            let n = &positives[row(hardest)];
            let un = direction(a, n, neg);
            for c in 0..d {
                d_anchors[i * d + c] += (up[c] - un[c]) / b as f64;
                d_positives[i * d + c] -= up[c] / b as f64;
                d_positives[hardest * d + c] += un[c] / b as f64;
            }
        }
    }
    Ok(TripletGrad {
        loss: loss / b as f64,
        d_anchors,
        d_positives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::random_values;

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.5; 7], 3).unwrap() - 7f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[20.0, 0.0], 0).unwrap() < 1e-6);
        assert!(matches!(
            cross_entropy(&[0.0, 1.0], 2),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = random_values(5, 1);
        let (_, g) = cross_entropy_grad(&logits, 2).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p[i] += h;
            m[i] -= h;
            let n = (cross_entropy(&p, 2).unwrap() - cross_entropy(&m, 2).unwrap()) / (2.0 * h);
            assert!((n - g[i]).abs() / n.abs().max(g[i].abs()).max(1e-5) < 1e-4);
        }
    }

    #[test]
    fn classify_gradient_through_fc() {
        let fc = Linear::new(4, 3, random_values(12, 2), random_values(3, 3)).unwrap();
        let x = random_values(4, 4);
        let (_, dl) = cross_entropy_grad(&classify(&x, &fc).unwrap(), 1).unwrap();
        let (_, grads) = fc.backward(&x, &dl);
        let h = 1e-6;
        for i in 0..12 {
            let (mut p, mut m) = (fc.clone(), fc.clone());
            p.weights[i] += h;
            m.weights[i] -= h;
            let lp = cross_entropy(&classify(&x, &p).unwrap(), 1).unwrap();
            let lm = cross_entropy(&classify(&x, &m).unwrap(), 1).unwrap();
            let n = (lp - lm) / (2.0 * h);
            let a = grads.weights[i];
            assert!((n - a).abs() / n.abs().max(a.abs()).max(1e-5) < 1e-4);
        }
        assert!(classify(&x[..3], &fc).is_err());
    }

    #[test]
    fn combined_loss_adds_attention_term() {
        let (l, g) = combined_loss(1.5, &[0.0; 4], None, 2.0).unwrap();
        assert_eq!((l, g), (1.5, vec![0.0; 4]));
        let (l, _) = combined_loss(1.5, &[0.0; 4], Some(1), 2.0).unwrap();
        assert!((l - (1.5 + 2.0 * 4f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn triplet_hand_cases() {
        assert_eq!(batch_hard_triplet(&[0.0, 1.0], &[0.0, 1.0], 1, 0.5).unwrap(), 0.0);
        let l = batch_hard_triplet(&[0.0, 1.0], &[0.4, 1.4], 1, 1.0).unwrap();
        assert!((l - 0.4).abs() < 1e-15);
        let a = [0.0, 0.0, 3.0, 0.0, 0.0, 3.0];
        assert_eq!(batch_hard_triplet(&a, &a, 2, 1.0).unwrap(), 0.0);
        assert!(batch_hard_triplet(&[0.0], &[0.0], 1, 1.0).is_err());
    }

    #[test]
    fn triplet_permutation_invariant_and_gradient() {
        let a = random_values(5 * 3, 5);
        let p: Vec<f64> = random_values(5 * 3, 6).iter().zip(&a).map(|(n, x)| x + 0.3 * n).collect();
        let perm = [2, 4, 0, 1, 3];
        let pa: Vec<f64> = perm.iter().flat_map(|&i| a[i * 3..i * 3 + 3].to_vec()).collect();
        let pp: Vec<f64> = perm.iter().flat_map(|&i| p[i * 3..i * 3 + 3].to_vec()).collect();
        let margin = 1.5;
        let l = batch_hard_triplet(&a, &p, 3, margin).unwrap();
        assert!((l - batch_hard_triplet(&pa, &pp, 3, margin).unwrap()).abs() < 1e-12);
        assert!(l > 0.0);

        let g = batch_hard_triplet_grad(&a, &p, 3, margin).unwrap();
        let h = 1e-6;
        for i in 0..a.len() {
            let (mut up, mut dn) = (a.clone(), a.clone());
            up[i] += h;
            dn[i] -= h;
            let n = (batch_hard_triplet(&up, &p, 3, margin).unwrap() - batch_hard_triplet(&dn, &p, 3, margin).unwrap())
                / (2.0 * h);
            let an = g.d_anchors[i];
            assert!((n - an).abs() / n.abs().max(an.abs()).max(1e-5) < 1e-4);
            let (mut up, mut dn) = (p.clone(), p.clone());
            up[i] += h;
            dn[i] -= h;
            let n = (batch_hard_triplet(&a, &up, 3, margin).unwrap() - batch_hard_triplet(&a, &dn, 3, margin).unwrap())
                / (2.0 * h);
            let an = g.d_positives[i];
            assert!((n - an).abs() / n.abs().max(an.abs()).max(1e-5) < 1e-4);
        }
    }
}
