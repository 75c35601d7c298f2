use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::conv::Correlation;
use crate::error::{Error, Result};
use crate::group::GroupKind;
use crate::train::Pooling;

/// Hyperparameters of the toy experiments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub group: GroupKind,
    pub points: usize,
    pub stride: usize,
    pub radii: Vec<f64>,
    pub k_max: Vec<usize>,
    pub channels: Vec<usize>,
    pub kernel_points: usize,
    pub group_neighbors: usize,
    /// Correlation bandwidth as a fraction of each level's radius.
    pub sigma_ratio: f64,
    pub correlation: Correlation,
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Training-mode batches whose average statistics replace the batch-norm
    /// running statistics after the last step; 0 keeps the moving averages.
    pub recalibration_batches: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub margin: f64,
    pub jitter: f64,
    pub eval_rotations: usize,
    pub baseline: bool,
    pub pooling: Vec<Pooling>,
    pub test_samples: usize,
    pub identical_classes: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            group: GroupKind::Icosahedral,
            points: 128,
            stride: 2,
            radii: vec![0.4, 0.8],
            k_max: vec![16, 16],
            channels: vec![8, 16],
            kernel_points: 8,
            group_neighbors: 6,
            sigma_ratio: 0.6,
            correlation: Correlation::Linear,
            hidden: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 8,
            iterations: 400,
            recalibration_batches: 20,
            decay_every: 150,
            decay_factor: 0.5,
            lambda: 1.0,
            temperature: 1.0,
            margin: 1.0,
            jitter: 0.02,
            eval_rotations: 256,
            baseline: true,
            pooling: vec![Pooling::Attentive, Pooling::Max, Pooling::Mean],
            test_samples: 200,
            identical_classes: false,
            log_every: 10,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("invalid value `{v}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_value(key, s)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("invalid value `{v}` for `{key}`"))),
    }
}

impl TrainConfig {
    /// Defaults for the classification toy: the pose defaults with a larger
    /// learning rate.
    pub fn cls_defaults() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            ..TrainConfig::default()
        }
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_over(TrainConfig::default(), text)
    }

    /// Parses `key = value` lines over `base`.
    pub fn parse_over(base: TrainConfig, text: &str) -> Result<Self> {
        let mut c = base;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "seed" => c.seed = parse_value(key, v)?,
                "group" => c.group = v.parse()?,
                "points" => c.points = parse_value(key, v)?,
                "stride" => c.stride = parse_value(key, v)?,
                "radii" => c.radii = parse_list(key, v)?,
                "k_max" => c.k_max = parse_list(key, v)?,
                "channels" => c.channels = parse_list(key, v)?,
                "kernel_points" => c.kernel_points = parse_value(key, v)?,
                "group_neighbors" => c.group_neighbors = parse_value(key, v)?,
                "sigma_ratio" => c.sigma_ratio = parse_value(key, v)?,
                "correlation" => c.correlation = v.parse()?,
                "hidden" => c.hidden = parse_value(key, v)?,
                "learning_rate" => c.learning_rate = parse_value(key, v)?,
                "beta1" => c.beta1 = parse_value(key, v)?,
                "beta2" => c.beta2 = parse_value(key, v)?,
                "batch_size" => c.batch_size = parse_value(key, v)?,
                "iterations" => c.iterations = parse_value(key, v)?,
                "recalibration_batches" => c.recalibration_batches = parse_value(key, v)?,
                "decay_every" => c.decay_every = parse_value(key, v)?,
                "decay_factor" => c.decay_factor = parse_value(key, v)?,
                "lambda" => c.lambda = parse_value(key, v)?,
                "temperature" => c.temperature = parse_value(key, v)?,
                "margin" => c.margin = parse_value(key, v)?,
                "jitter" => c.jitter = parse_value(key, v)?,
                "eval_rotations" => c.eval_rotations = parse_value(key, v)?,
                "baseline" => c.baseline = parse_bool(key, v)?,
                "pooling" => c.pooling = v.split(',').map(|s| s.parse()).collect::<Result<_>>()?,
                "test_samples" => c.test_samples = parse_value(key, v)?,
                "identical_classes" => c.identical_classes = parse_bool(key, v)?,
                "log_every" => c.log_every = parse_value(key, v)?,
                other => return Err(Error::Parse(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        let levels = self.radii.len();
        if levels == 0 || self.k_max.len() != levels || self.channels.len() != levels {
            return bad("radii, k_max and channels need one entry per level");
        }
        if self.radii.iter().any(|r| !(*r > 0.0)) || self.k_max.contains(&0) || self.channels.contains(&0) {
            return bad("radii, k_max and channels must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.sigma_ratio > 0.0) || !(self.temperature > 0.0) {
            return bad("learning_rate, sigma_ratio and temperature must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.points == 0 || self.batch_size == 0 || self.stride == 0 || self.kernel_points == 0 || self.hidden == 0 {
            return bad("points, batch_size, stride, kernel_points and hidden must be positive");
        }
        if self.group_neighbors == 0 || self.group_neighbors > self.group.order() {
            return bad("group_neighbors must lie in 1..=|G|");
        }
        if self.pooling.is_empty() {
            return bad("at least one pooling variant is required");
        }
        Ok(())
    }
}
