//! Coupling-conditioned flow matching for snapshot time series.
//!
//! Cell populations observed at a handful of times are embedded with a
//! Gaussian VAE. Forward and backward time-conditioned velocity fields are
//! fitted in that latent space by regressing onto straight-line bridges
//! between entropic-OT-coupled minibatches, with periodic distribution-level
//! anchoring of long rollouts. The fitted forward field generates populations
//! at unobserved times.
//!
//! Modules:
//! - [`tensor`]: dense matrices, reverse-mode tape, Adam.
//! - [`ot`]: cost matrices, log-domain Sinkhorn, Top-K couplings, Sinkhorn distances.
//! - [`vae`]: Gaussian encoder/decoder and its loss.
//! - [`flow`]: time embedding, velocity networks, Euler/RK4 rollouts.
//! - [`train`]: two-phase training loop.
//! - [`data`]: snapshot datasets, CSV, preprocessing, holdout splits, synthetic generators.
//! - [`eval`]: prediction, metrics, naive baseline, projections.

pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod model;
pub mod ot;
pub mod parallel;
pub mod stats;
pub mod tensor;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
pub use model::ModelBundle;
pub use tensor::{Adam, ParamStore, Tape, Tensor, Var};
