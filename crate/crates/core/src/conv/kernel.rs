use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

const SPIRAL_RADIUS: f64 = 0.7;
const REPULSION_ITERATIONS: usize = 200;
const REPULSION_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    /// `max(0, 1 − ‖y − ỹ‖/σ)`
    Linear,
    /// `exp(−‖y − ỹ‖²/(2σ²))`
    Gaussian,
}

impl std::str::FromStr for Correlation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(Correlation::Linear),
            "gaussian" => Ok(Correlation::Gaussian),
            other => Err(Error::InvalidArgument(format!("unknown correlation `{other}`"))),
        }
    }
}

#[inline]
pub fn correlation(y: Vec3, y_k: Vec3, sigma: f64, kind: Correlation) -> f64 {
    match kind {
        Correlation::Linear => (1.0 - y.distance(y_k) / sigma).max(0.0),
        Correlation::Gaussian => (-y.distance_squared(y_k) / (2.0 * sigma * sigma)).exp(),
    }
}

/// `K` kernel points spread through the ball of radius `r`: the origin plus
/// `K − 1` points started on a Fibonacci spiral at `0.7r` and pushed apart by
/// 200 fixed-length steps of inverse-square repulsion, clamped to the ball.
pub fn make_kernel_points(k: usize, r: f64) -> Vec<Vec3> {
    let mut points = vec![Vec3::ZERO];
    if k <= 1 {
        return points;
    }
    let movable = k - 1;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..movable {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / movable as f64;
        let ring = (1.0 - y * y).max(0.0).sqrt();
        let theta = golden * i as f64;
        points.push(Vec3::new(theta.cos() * ring, y, theta.sin() * ring) * (SPIRAL_RADIUS * r));
    }
    let step = REPULSION_STEP * r;
    for _ in 0..REPULSION_ITERATIONS {
        let forces: Vec<Vec3> = (1..k)
            .map(|i| {
                let mut f = Vec3::ZERO;
                for j in 0..k {
                    if i != j {
                        let d = points[i] - points[j];
                        let n2 = d.norm_squared();
                        f += d * (1.0 / (n2 * n2.sqrt()));
                    }
                }
                f
            })
            .collect();
        for (i, f) in (1..k).zip(forces) {
            let n = f.norm();
            if n > 0.0 {
                points[i] += f * (step / n);
            }
            let len = points[i].norm();
            if len > r {
                points[i] = points[i] * (r / len);
            }
        }
    }
    points
}

/// Kernel points `ỹ_k` with one `D_in × D_out` weight matrix each.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitKernel {
    pub kernel_points: Vec<Vec3>,
    /// `K × D_in × D_out`, row-major.
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub correlation: Correlation,
    pub radius: f64,
    pub d_in: usize,
    pub d_out: usize,
}

impl ExplicitKernel {
    pub fn new(
        kernel_points: Vec<Vec3>,
        weights: Vec<f64>,
        d_in: usize,
        d_out: usize,
        sigma: f64,
        radius: f64,
        correlation: Correlation,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if kernel_points.iter().any(|p| p.norm() > radius * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument("kernel point outside the kernel ball".into()));
        }
        if weights.len() != kernel_points.len() * d_in * d_out {
            return Err(crate::error::mismatch(
                "explicit kernel",
                format!("{} weights for K={} × {d_in} × {d_out}", weights.len(), kernel_points.len()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel weights"));
        }
        Ok(ExplicitKernel {
            kernel_points,
            weights,
            sigma,
            correlation,
            radius,
            d_in,
            d_out,
        })
    }

    pub fn num_points(&self) -> usize {
        self.kernel_points.len()
    }

    pub fn weight(&self, k: usize) -> &[f64] {
        let s = self.d_in * self.d_out;
        &self.weights[k * s..(k + 1) * s]
    }
}
