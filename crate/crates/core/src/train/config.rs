use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Every scalar the training loop reads. JSON configs must spell out every key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Entropic strength of the minibatch coupling.
    pub epsilon: f64,
    /// Steps `s ≤ e_warm` pair cells by Euclidean latent cost, later steps by the fused cost.
    pub e_warm: usize,
    /// Global losses are added on steps with `s mod k_ot == 0`.
    pub k_ot: usize,
    /// Couplings kept per source cell.
    pub top_k: usize,
    /// Cells drawn per timepoint per step.
    pub batch_size: usize,
    pub lambda_fm: f64,
    pub lambda_ot: f64,
    pub lambda_dyn: f64,
    pub lambda_kl: f64,
    pub learning_rate: f64,
    /// Phase-II step budget.
    pub max_steps: usize,
    /// Phase-I epochs over all training cells.
    pub vae_epochs: usize,
    /// Phase-I stops after this many epochs without relative improvement of `convergence_tol`.
    pub vae_patience: usize,
    /// Phase-II steps per moving-average window.
    pub convergence_window: usize,
    /// Phase-II stops after this many windows without relative improvement of `convergence_tol`.
    pub patience: usize,
    pub convergence_tol: f64,
    pub seed: u64,
    /// Bridge positions drawn per retained pair.
    pub alpha_samples: usize,
    pub freeze_vae: bool,
    pub rk4_step: f64,
    /// Entropic strength of the global couplings, as a length (`ε = blur²`).
    pub global_blur: f64,
    pub global_sinkhorn_iters: usize,
    /// Per-stage blur factor for ε-annealing in every Sinkhorn solve.
    pub sinkhorn_scaling: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    /// Phase-II steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epsilon: 0.05,
            e_warm: 200,
            k_ot: 10,
            top_k: 5,
            batch_size: 128,
            lambda_fm: 1.0,
            lambda_ot: 0.1,
            lambda_dyn: 0.1,
            lambda_kl: 1e-3,
            learning_rate: 1e-3,
            max_steps: 3000,
            vae_epochs: 500,
            vae_patience: 25,
            convergence_window: 50,
            patience: 10,
            convergence_tol: 1e-4,
            seed: 0,
            alpha_samples: 1,
            freeze_vae: false,
            rk4_step: 0.1,
            global_blur: 0.05,
            global_sinkhorn_iters: 200,
            sinkhorn_scaling: 0.5,
            sinkhorn_max_iters: 500,
            sinkhorn_tol: 1e-6,
            checkpoint_every: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.k_ot == 0 {
            return fail("k_ot must be at least 1");
        }
        if self.batch_size == 0 || self.top_k == 0 || self.top_k > self.batch_size {
            return fail("top_k must lie in 1..=batch_size");
        }
        let lambdas = [self.lambda_fm, self.lambda_ot, self.lambda_dyn, self.lambda_kl];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return fail("loss weights must be finite and nonnegative");
        }
        if !(self.learning_rate > 0.0) || !(self.rk4_step > 0.0) || !(self.global_blur > 0.0) {
            return fail("learning_rate, rk4_step and global_blur must be positive");
        }
        if !(self.sinkhorn_scaling > 0.0 && self.sinkhorn_scaling < 1.0) {
            return fail("sinkhorn_scaling must lie in (0, 1)");
        }
        if self.alpha_samples == 0 || self.convergence_window == 0 {
            return fail("alpha_samples and convergence_window must be at least 1");
        }
        Ok(())
    }

    pub fn global_epsilon(&self) -> f64 {
        self.global_blur * self.global_blur
    }

    /// Whether the global losses contribute at all.
    pub fn uses_global_losses(&self) -> bool {
        self.lambda_ot > 0.0 || self.lambda_dyn > 0.0
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
