//! Feed-forward policy runtime.
//!
//! Weights are JSON:
//! `{obs_dim, act_dim, activation, layers: [{rows, cols, w, b}], obs_mean, obs_std}`
//! where `w` is row-major `rows × cols` (`rows` outputs, `cols` inputs) and
//! `obs_mean` / `obs_std` are optional (empty or absent means no normalization).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub obs_mean: Vec<f64>,
    #[serde(default)]
    pub obs_std: Vec<f64>,
}

impl PolicyWeights {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers.is_empty() {
            return bad("policy has no layers".into());
        }
        let mut width = self.obs_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.cols != width {
                return bad(format!("layer {i} expects {} inputs, previous width is {width}", l.cols));
            }
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return bad(format!("layer {i} buffers do not match {}x{}", l.rows, l.cols));
            }
            if l.w.iter().chain(&l.b).any(|x| !x.is_finite()) {
                return bad(format!("layer {i} has non-finite weights"));
            }
            width = l.rows;
        }
        if width != self.act_dim {
            return bad(format!("last layer outputs {width}, act_dim is {}", self.act_dim));
        }
        let has_norm = !self.obs_mean.is_empty() || !self.obs_std.is_empty();
        if has_norm {
            if self.obs_mean.len() != self.obs_dim || self.obs_std.len() != self.obs_dim {
                return bad("obs_mean/obs_std must have obs_dim entries".into());
            }
            if self.obs_std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return bad("obs_std entries must be positive".into());
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Normalized observation through the affine/activation stack; the last
/// layer is linear and its output is clamped to `[-1, 1]`.
pub fn mlp_forward(weights: &PolicyWeights, obs: &[f64]) -> Result<Vec<f64>> {
    if obs.len() != weights.obs_dim {
        return Err(Error::Shape { expected: weights.obs_dim, got: obs.len() });
    }
    let mut x: Vec<f64> = if weights.obs_mean.is_empty() {
        obs.to_vec()
    } else {
        obs.iter()
            .zip(&weights.obs_mean)
            .zip(&weights.obs_std)
            .map(|((o, m), s)| (o - m) / s)
            .collect()
    };
    let last = weights.layers.len() - 1;
    for (i, l) in weights.layers.iter().enumerate() {
        let mut y: Vec<f64> = l
            .w
            .chunks_exact(l.cols)
            .zip(&l.b)
            .map(|(row, b)| row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        if i < last {
            y.iter_mut().for_each(|v| *v = weights.activation.apply(*v));
        }
        x = y;
    }
    Ok(x.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

/// Applies the policy to every row of a batch of observations.
pub fn mlp_forward_batch(weights: &PolicyWeights, obs: &[f64]) -> Result<Vec<f64>> {
    if weights.obs_dim == 0 || obs.len() % weights.obs_dim != 0 {
        return Err(Error::Shape { expected: weights.obs_dim, got: obs.len() });
    }
    let mut out = Vec::with_capacity(obs.len() / weights.obs_dim * weights.act_dim);
    for row in obs.chunks_exact(weights.obs_dim) {
        out.extend(mlp_forward(weights, row)?);
    }
    Ok(out)
}
