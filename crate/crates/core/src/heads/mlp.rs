use crate::conv::{leaky_relu, leaky_relu_backward};
use crate::error::{mismatch, Error, Result};

/// Affine map `y = xW + b` applied to each row of a row-major batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    /// `d_in × d_out`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != d_in * d_out || bias.len() != d_out {
            return Err(mismatch("linear", format!("expected {d_in} × {d_out} weights and {d_out} biases")));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear parameters"));
        }
        Ok(Linear {
            d_in,
            d_out,
            weights,
            bias,
        })
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            d_in,
            d_out,
            weights: vec![0.0; d_in * d_out],
            bias: vec![0.0; d_out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() % self.d_in != 0 {
            return Err(mismatch("linear", format!("{} inputs for rows of {}", x.len(), self.d_in)));
        }
        let mut out = Vec::with_capacity(x.len() / self.d_in * self.d_out);
        for row in x.chunks_exact(self.d_in) {
            let mut y = self.bias.clone();
            crate::conv::matvec_acc(row, &self.weights, &mut y);
            out.extend(y);
        }
        Ok(out)
    }

    /// Returns `∂L/∂x` and the parameter gradients.
    pub fn backward(&self, x: &[f64], d_out: &[f64]) -> (Vec<f64>, LinearGrads) {
        let mut dx = vec![0.0; x.len()];
        let mut grads = LinearGrads {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.d_out],
        };
        for ((row, dy), dxr) in x
            .chunks_exact(self.d_in)
            .zip(d_out.chunks_exact(self.d_out))
            .zip(dx.chunks_exact_mut(self.d_in))
        {
            crate::conv::outer_acc(row, dy, &mut grads.weights);
            for (b, g) in grads.bias.iter_mut().zip(dy) {
                *b += g;
            }
            crate::conv::matvec_t_acc(&self.weights, dy, dxr);
        }
        (dx, grads)
    }
}

/// Two affine layers with a leaky ReLU between them, shared across rows.
/// Applied to `|G| × D` features it gives one output row per group element.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorMlp {
    pub first: Linear,
    pub second: Linear,
}

#[derive(Debug, Clone)]
pub struct AnchorMlpCache {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorMlpGrads {
    pub first: LinearGrads,
    pub second: LinearGrads,
}

impl AnchorMlp {
    pub fn new(first: Linear, second: Linear) -> Result<Self> {
        if first.d_out != second.d_in {
            return Err(mismatch("anchor mlp", "hidden sizes differ"));
        }
        Ok(AnchorMlp { first, second })
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, AnchorMlpCache)> {
        let pre = self.first.forward(x)?;
        let hidden = leaky_relu(&pre);
        let out = self.second.forward(&hidden)?;
        Ok((out, AnchorMlpCache { pre, hidden }))
    }

    pub fn backward(&self, x: &[f64], cache: &AnchorMlpCache, d_out: &[f64]) -> (Vec<f64>, AnchorMlpGrads) {
        let (d_hidden, second) = self.second.backward(&cache.hidden, d_out);
        let d_pre = leaky_relu_backward(&cache.pre, &d_hidden);
        let (dx, first) = self.first.backward(x, &d_pre);
        (dx, AnchorMlpGrads { first, second })
    }
}
