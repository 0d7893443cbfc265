//! Time-conditioned velocity fields and fixed-step latent rollouts.

mod embedding;
mod field;
mod integrate;

pub use embedding::TimeEmbedding;
pub use field::{eval_detached, BoundField, ConstantField, Direction, FieldNet, LinearField, VelocityField, ZeroField};
pub use integrate::{integrate, integrate_detached, Method, Rollout};
