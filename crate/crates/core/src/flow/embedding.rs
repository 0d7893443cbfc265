use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

const MAX_FREQ_MULTIPLE: f64 = 1000.0;

/// Sinusoidal embedding of physical time.
///
/// Times are mapped affinely so that `[t_min, t_max]` becomes `[0, 1]` (times
/// outside the range extrapolate the same map), then expanded as
/// `(sin(ω_k τ)…, cos(ω_k τ)…)` with `dim/2` frequencies spaced geometrically
/// from `π` to `1000π`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl TimeEmbedding {
    pub fn new(dim: usize, t_min: f64, t_max: f64) -> Self {
        assert!(dim >= 2 && dim % 2 == 0, "time embedding dimension must be even");
        TimeEmbedding { dim, t_min, t_max }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.dim / 2;
        if n == 1 {
            return vec![PI];
        }
        (0..n)
            .map(|k| PI * MAX_FREQ_MULTIPLE.powf(k as f64 / (n - 1) as f64))
            .collect()
    }

    pub fn normalize(&self, t: f64) -> f64 {
        let span = self.t_max - self.t_min;
        if span > 0.0 {
            (t - self.t_min) / span
        } else {
            t - self.t_min
        }
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let tau = self.normalize(t);
        let freqs = self.frequencies();
        let mut out = Vec::with_capacity(self.dim);
        out.extend(freqs.iter().map(|w| (w * tau).sin()));
        out.extend(freqs.iter().map(|w| (w * tau).cos()));
        out
    }

    /// One embedding row per time.
    pub fn embed_rows(&self, times: &[f64]) -> Tensor {
        let rows: Vec<Vec<f64>> = times.iter().map(|&t| self.embed(t)).collect();
        Tensor::from_rows(&rows).expect("equal widths")
    }
}
