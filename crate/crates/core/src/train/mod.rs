//! Two-phase training: VAE pretraining, then joint flow-matching with periodic global
//! transport losses.

mod config;
mod fm;
mod global;
mod log;
mod trainer;

use rand::Rng;

use crate::error::{Error, Result};

pub use config::TrainConfig;
pub use fm::{fm_loss_topk, AlphaTable, BridgeSample};
pub use global::{global_losses, transport_term, GlobalLosses, GlobalOptions};
pub use log::{Phase, StepRecord, TrainLog, LOG_COLUMNS};
pub use trainer::{fit, fit_with, FitOutput, FitSummary, Trainer};

/// `b` row indices out of `n`: without replacement when `n ≥ b`, otherwise with.
pub(crate) fn sample_indices(n: usize, b: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Dataset("cannot sample from an empty timepoint".into()));
    }
    if n >= b {
        Ok(rand::seq::index::sample(rng, n, b).into_vec())
    } else {
        Ok((0..b).map(|_| rng.random_range(0..n)).collect())
    }
}
