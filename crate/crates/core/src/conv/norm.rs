use crate::error::{mismatch, Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with the running statistics.
    Inference,
}

/// Per-channel batch normalization over every (point, group element) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    /// Unit scale, zero shift, zero mean, unit variance.
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Moves the running statistics toward the batch statistics in `cache`.
    /// Variance uses the unbiased estimate.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if cache.mode != NormMode::Train {
            return;
        }
        let (mean, var) = cache.unbiased_statistics();
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * var[c];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub mode: NormMode,
    pub count: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub x_hat: Vec<f64>,
}

impl BatchNormCache {
    /// Batch mean and unbiased batch variance.
    pub fn unbiased_statistics(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count as f64;
        let correction = if self.count > 1 { n / (n - 1.0) } else { 1.0 };
        (self.mean.clone(), self.var.iter().map(|v| v * correction).collect())
    }
}

/// Normalizes `values` (rows of `channels` entries). Pure: running
/// statistics are left untouched, see [`BatchNorm::update_running`].
pub fn batch_norm_forward(values: &[f64], bn: &BatchNorm, mode: NormMode) -> Result<(Vec<f64>, BatchNormCache)> {
    let d = bn.channels();
    if d == 0 || values.len() % d != 0 {
        return Err(mismatch("batch_norm", format!("{} values for {d} channels", values.len())));
    }
    let count = values.len() / d;
    if count == 0 {
        return Err(Error::InvalidArgument("batch norm over an empty batch".into()));
    }
    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = vec![0.0; d];
            for row in values.chunks_exact(d) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; d];
            for row in values.chunks_exact(d) {
                for c in 0..d {
                    let t = row[c] - mean[c];
                    var[c] += t * t;
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            (mean, var)
        }
        NormMode::Inference => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = Vec::with_capacity(values.len());
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks_exact(d) {
        for c in 0..d {
            let h = (row[c] - mean[c]) * inv_std[c];
            x_hat.push(h);
            out.push(bn.gamma[c] * h + bn.beta[c]);
        }
    }
    Ok((
        out,
        BatchNormCache {
            mode,
            count,
            mean,
            var,
            inv_std,
            x_hat,
        },
    ))
}

/// Returns `(∂L/∂x, ∂L/∂γ, ∂L/∂β)`.
pub fn batch_norm_backward(bn: &BatchNorm, cache: &BatchNormCache, d_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = bn.channels();
    let n = cache.count as f64;
    let mut d_gamma = vec![0.0; d];
    let mut d_beta = vec![0.0; d];
    for (dy, xh) in d_out.chunks_exact(d).zip(cache.x_hat.chunks_exact(d)) {
        for c in 0..d {
            d_gamma[c] += dy[c] * xh[c];
            d_beta[c] += dy[c];
        }
    }
    let mut dx = Vec::with_capacity(d_out.len());
    match cache.mode {
        NormMode::Inference => {
            for dy in d_out.chunks_exact(d) {
                for c in 0..d {
                    dx.push(dy[c] * bn.gamma[c] * cache.inv_std[c]);
                }
            }
        }
        NormMode::Train => {
            for (dy, xh) in d_out.chunks_exact(d).zip(cache.x_hat.chunks_exact(d)) {
                for c in 0..d {
                    let g = bn.gamma[c] * cache.inv_std[c] / n;
                    dx.push(g * (n * dy[c] - d_beta[c] - xh[c] * d_gamma[c]));
                }
            }
        }
    }
    (dx, d_gamma, d_beta)
}

pub fn leaky_relu(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| if v >= 0.0 { v } else { LEAKY_SLOPE * v }).collect()
}

/// Gradient through [`leaky_relu`] given its input `pre`.
pub fn leaky_relu_backward(pre: &[f64], d_out: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(d_out)
        .map(|(&p, &g)| if p >= 0.0 { g } else { LEAKY_SLOPE * g })
        .collect()
}
