//! Entropic optimal transport: costs, Sinkhorn plans, Top-K couplings and distances.

mod cost;
mod distance;
mod sinkhorn;
mod topk;

pub use cost::{cost_bidirectional, cost_euclidean, euler_one_step, sq_dists, CostKind, CostMatrix};
pub use distance::{ot_distance, OtDistanceOptions};
pub use sinkhorn::{sinkhorn, sinkhorn_uniform, uniform, Coupling, SinkhornOptions};
pub use topk::{topk_truncate, TopKCoupling};
