use crate::error::{mismatch, Error, Result};
use crate::heads::channels_of;

/// Softmax with the maximum subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= z);
    e
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Gradient w.r.t. the logits given the softmax output and `∂L/∂probs`.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let s: f64 = probs.iter().zip(d_probs).map(|(p, d)| p * d).sum();
    probs.iter().zip(d_probs).map(|(p, d)| p * (d - s)).collect()
}

/// Attention weights `a_g` over the group, nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector {
    weights: Vec<f64>,
}

impl AttentionVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("empty attention vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("attention weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("attention weights sum to {sum}")));
        }
        Ok(AttentionVector { weights })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attention logits"));
        }
        Ok(AttentionVector { weights: softmax(logits) })
    }

    pub fn uniform(n: usize) -> Self {
        AttentionVector {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn pooling_weights(a: &AttentionVector, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = a.weights.iter().map(|w| w / temperature).collect();
    if scaled.iter().any(|v| !v.is_finite()) {
        return Err(Error::TemperatureTooSmall { temperature });
    }
    let w = softmax(&scaled);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::TemperatureTooSmall { temperature });
    }
    Ok(w)
}

/// `Σ_g exp(a_g/T)·F(g) / Σ_g exp(a_g/T)`.
pub fn ga_pooling(features: &[f64], a: &AttentionVector, temperature: f64) -> Result<Vec<f64>> {
    let d = channels_of("ga_pooling", features, a.len())?;
    let w = pooling_weights(a, temperature)?;
    let mut out = vec![0.0; d];
    for (row, wg) in features.chunks_exact(d).zip(&w) {
        for (o, f) in out.iter_mut().zip(row) {
            *o += wg * f;
        }
    }
    Ok(out)
}

/// Returns `(∂L/∂F, ∂L/∂a)`.
pub fn ga_pooling_backward(
    features: &[f64],
    a: &AttentionVector,
    temperature: f64,
    d_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = channels_of("ga_pooling", features, a.len())?;
    if d_out.len() != d {
        return Err(mismatch("ga_pooling", "upstream gradient length"));
    }
    let w = pooling_weights(a, temperature)?;
    let mut d_features = Vec::with_capacity(features.len());
    let mut d_w = Vec::with_capacity(w.len());
    for (row, wg) in features.chunks_exact(d).zip(&w) {
        d_features.extend(d_out.iter().map(|g| wg * g));
        d_w.push(row.iter().zip(d_out).map(|(f, g)| f * g).sum::<f64>());
    }
    let d_a = softmax_backward(&w, &d_w).into_iter().map(|v| v / temperature).collect();
    Ok((d_features, d_a))
}

pub fn pool_max(features: &[f64], group_order: usize) -> Result<Vec<f64>> {
    let d = channels_of("pool_max", features, group_order)?;
    let mut out = vec![f64::NEG_INFINITY; d];
    for row in features.chunks_exact(d) {
        for (o, f) in out.iter_mut().zip(row) {
            if *f > *o {
                *o = *f;
            }
        }
    }
    Ok(out)
}

/// Routes each channel's gradient to its first maximizing group element.
pub fn pool_max_backward(features: &[f64], group_order: usize, d_out: &[f64]) -> Result<Vec<f64>> {
    let d = channels_of("pool_max", features, group_order)?;
    let mut arg = vec![0usize; d];
    for (g, row) in features.chunks_exact(d).enumerate() {
        for c in 0..d {
            if row[c] > features[arg[c] * d + c] {
                arg[c] = g;
            }
        }
    }
    let mut grad = vec![0.0; features.len()];
    for c in 0..d {
        grad[arg[c] * d + c] = d_out[c];
    }
    Ok(grad)
}

pub fn pool_mean(features: &[f64], group_order: usize) -> Result<Vec<f64>> {
    let d = channels_of("pool_mean", features, group_order)?;
    let mut out = vec![0.0; d];
    for row in features.chunks_exact(d) {
        for (o, f) in out.iter_mut().zip(row) {
            *o += f;
        }
    }
    out.iter_mut().for_each(|o| *o /= group_order as f64);
    Ok(out)
}

pub fn pool_mean_backward(features: &[f64], group_order: usize, d_out: &[f64]) -> Result<Vec<f64>> {
    channels_of("pool_mean", features, group_order)?;
    let scale = 1.0 / group_order as f64;
    Ok((0..group_order).flat_map(|_| d_out.iter().map(move |g| g * scale)).collect())
}
