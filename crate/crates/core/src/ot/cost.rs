use crate::error::{Error, Result};
use crate::parallel::map_rows;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostKind {
    Euclidean,
    BidirectionalFused,
    GeneSpace,
    LatentSpace,
}

/// Nonnegative pairwise cost between two point sets.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    entries: Tensor,
    kind: CostKind,
}

impl CostMatrix {
    pub fn new(entries: Tensor, kind: CostKind) -> Result<Self> {
        if let Some(bad) = entries.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite(format!("cost entry {bad}")));
        }
        Ok(CostMatrix { entries, kind })
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn into_entries(self) -> Tensor {
        self.entries
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    pub fn max(&self) -> f64 {
        self.entries.data().iter().copied().fold(0.0, f64::max)
    }
}

/// Pairwise squared distances `‖a_i − b_j‖²`, computed directly (no norm expansion, so
/// identical points give exactly zero).
pub fn sq_dists(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "cost_euclidean",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let rows = map_rows(a.rows(), |i| {
        let ai = a.row(i);
        (0..b.rows())
            .map(|j| ai.iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .collect::<Vec<_>>()
    });
    Tensor::new(a.rows(), b.rows(), rows.concat())
}

pub fn cost_euclidean(za: &Tensor, zb: &Tensor) -> Result<CostMatrix> {
    CostMatrix::new(sq_dists(za, zb)?, CostKind::Euclidean)
}

/// `z + v·dt`. `dt` may be negative.
pub fn euler_one_step(z: &Tensor, velocity: &Tensor, dt: f64) -> Result<Tensor> {
    if z.shape() != velocity.shape() {
        return Err(Error::ShapeMismatch {
            op: "euler_one_step",
            left: z.shape(),
            right: velocity.shape(),
        });
    }
    let data = z.data().iter().zip(velocity.data()).map(|(z, v)| z + v * dt).collect();
    Tensor::new(z.rows(), z.cols(), data)
}

/// Fused cost from one-step Euler predictions of both fields:
/// `½‖ẑᵇ_i − zᵇ_j‖² + ½‖zᵃ_i − ẑᵃ_j‖²`, with `ẑᵇ = zᵃ + v_f(t_a, zᵃ)Δt` and
/// `ẑᵃ = zᵇ + v_b(t_b, zᵇ)(t_a − t_b)`.
///
/// `forward` and `backward` are evaluated once each on the whole batch.
pub fn cost_bidirectional<F, G>(
    za: &Tensor,
    zb: &Tensor,
    forward: F,
    backward: G,
    t_a: f64,
    t_b: f64,
) -> Result<CostMatrix>
where
    F: FnOnce(f64, &Tensor) -> Result<Tensor>,
    G: FnOnce(f64, &Tensor) -> Result<Tensor>,
{
    if !(t_b > t_a) {
        return Err(Error::invalid(
            "cost_bidirectional",
            format!("need t_b > t_a, got t_a={t_a}, t_b={t_b}"),
        ));
    }
    let dt = t_b - t_a;
    let zb_pred = euler_one_step(za, &forward(t_a, za)?, dt)?;
    let za_pred = euler_one_step(zb, &backward(t_b, zb)?, -dt)?;
    let fwd = sq_dists(&zb_pred, zb)?;
    let bwd = sq_dists(za, &za_pred)?;
    let data = fwd.data().iter().zip(bwd.data()).map(|(f, b)| 0.5 * f + 0.5 * b).collect();
    CostMatrix::new(Tensor::new(za.rows(), zb.rows(), data)?, CostKind::BidirectionalFused)
}
