use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::cost::{sq_dists, CostKind, CostMatrix};
use super::sinkhorn::{sinkhorn_uniform, SinkhornOptions};

/// Settings for the Sinkhorn approximation of the squared 2-Wasserstein distance.
///
/// `blur` is a length: the entropic strength is `blur²` on the squared-distance
/// ground cost. `scaling` controls ε-annealing from the cost diameter down to `blur`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtDistanceOptions {
    pub blur: f64,
    pub scaling: f64,
    pub debiased: bool,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for OtDistanceOptions {
    fn default() -> Self {
        OtDistanceOptions {
            blur: 0.05,
            scaling: 0.5,
            debiased: true,
            max_iters: 2000,
            tol: 1e-6,
        }
    }
}

impl OtDistanceOptions {
    pub fn epsilon(&self) -> f64 {
        self.blur * self.blur
    }

    fn sinkhorn(&self) -> SinkhornOptions {
        SinkhornOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            scaling: Some(self.scaling),
        }
    }
}

fn entropic_value(x: &Tensor, y: &Tensor, opts: &OtDistanceOptions) -> Result<f64> {
    let cost = CostMatrix::new(sq_dists(x, y)?, CostKind::GeneSpace)?;
    Ok(sinkhorn_uniform(&cost, opts.epsilon(), &opts.sinkhorn())?.dual_value())
}

/// Entropic transport value between two uniformly weighted point clouds with squared
/// Euclidean ground cost. The debiased variant is the Sinkhorn divergence
/// `OT(x, y) − ½OT(x, x) − ½OT(y, y)`.
pub fn ot_distance(x: &Tensor, y: &Tensor, opts: &OtDistanceOptions) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::invalid("ot_distance", "empty point set"));
    }
    if x.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            op: "ot_distance",
            left: x.shape(),
            right: y.shape(),
        });
    }
    if !(opts.blur > 0.0) {
        return Err(Error::invalid("ot_distance", "blur must be positive"));
    }
    let xy = entropic_value(x, y, opts)?;
    if !opts.debiased {
        return Ok(xy);
    }
    let xx = entropic_value(x, x, opts)?;
    let yy = entropic_value(y, y, opts)?;
    Ok(xy - 0.5 * xx - 0.5 * yy)
}
