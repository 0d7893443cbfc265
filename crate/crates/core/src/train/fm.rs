//! Coupling-weighted flow matching along linear latent bridges.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::ot::TopKCoupling;
use crate::tensor::{Tensor, Var};

/// One point on the straight path from `zᵃ_i` at `t_a` to `zᵇ_j` at `t_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSample {
    pub i: usize,
    pub j: usize,
    pub alpha: f64,
    pub t: f64,
    pub z: Vec<f64>,
    /// Constant velocity of the bridge.
    pub target: Vec<f64>,
    pub weight: f64,
}

impl BridgeSample {
    pub fn new(za: &[f64], zb: &[f64], t_a: f64, t_b: f64, (i, j): (usize, usize), alpha: f64, weight: f64) -> Self {
        let dt = t_b - t_a;
        BridgeSample {
            i,
            j,
            alpha,
            t: (1.0 - alpha) * t_a + alpha * t_b,
            z: za.iter().zip(zb).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect(),
            target: za.iter().zip(zb).map(|(a, b)| (b - a) / dt).collect(),
            weight,
        }
    }
}

/// Bridge fractions `α` indexed by `(source row, target column, sample)`, so a pair keeps its
/// draws no matter where it appears in a coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaTable {
    rows: usize,
    cols: usize,
    samples: usize,
    data: Vec<f64>,
}

impl AlphaTable {
    pub fn sample(rows: usize, cols: usize, samples: usize, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols * samples).map(|_| rng.random::<f64>()).collect();
        AlphaTable {
            rows,
            cols,
            samples,
            data,
        }
    }

    /// The same `α` for every pair and sample.
    pub fn constant(rows: usize, cols: usize, samples: usize, alpha: f64) -> Self {
        AlphaTable {
            rows,
            cols,
            samples,
            data: vec![alpha; rows * cols * samples],
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn get(&self, i: usize, j: usize, s: usize) -> f64 {
        self.data[(i * self.cols + j) * self.samples + s]
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let width = self.cols * self.samples;
        let data = perm
            .iter()
            .flat_map(|&p| self.data[p * width..(p + 1) * width].iter().copied())
            .collect();
        AlphaTable {
            rows: perm.len(),
            data,
            ..self.clone()
        }
    }
}

/// `(1/m)·Σ_(i,j) w_ij · mean_α (‖v_f(t_α, z_α) − u_ij‖² + ‖v_b(t_α, z_α) − u_ij‖²)` over the
/// retained pairs, where `m` is the retained mass and `u_ij = (zᵇ_j − zᵃ_i)/(t_b − t_a)`.
/// The backward field is fit to the same velocity since it is integrated with negative steps.
#[allow(clippy::too_many_arguments)]
pub fn fm_loss_topk<'t, F, G>(
    coupling: &TopKCoupling,
    za: Var<'t>,
    zb: Var<'t>,
    t_a: f64,
    t_b: f64,
    forward: &F,
    backward: &G,
    alphas: &AlphaTable,
) -> Result<Var<'t>>
where
    F: VelocityField + ?Sized,
    G: VelocityField + ?Sized,
{
    let m = coupling.retained_mass();
    if !(m > 0.0) {
        return Err(Error::DegenerateCoupling);
    }
    if !(t_b > t_a) {
        return Err(Error::invalid("fm_loss_topk", format!("need t_b > t_a, got {t_a} and {t_b}")));
    }
    if za.cols() != zb.cols() || coupling.num_rows() != za.rows() {
        return Err(Error::ShapeMismatch {
            op: "fm_loss_topk",
            left: za.shape(),
            right: zb.shape(),
        });
    }
    if alphas.rows != za.rows() || alphas.cols != zb.rows() {
        return Err(Error::invalid(
            "fm_loss_topk",
            format!(
                "α table is {}×{}, batches are {}×{}",
                alphas.rows,
                alphas.cols,
                za.rows(),
                zb.rows()
            ),
        ));
    }
    let s = alphas.samples;
    let (mut ia, mut jb, mut alpha, mut weight) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, j, w) in coupling.pairs() {
        if j >= zb.rows() {
            return Err(Error::invalid("fm_loss_topk", format!("coupling column {j} out of range")));
        }
        for k in 0..s {
            ia.push(i);
            jb.push(j);
            alpha.push(alphas.get(i, j, k));
            weight.push(w / (m * s as f64));
        }
    }
    let tape = za.tape();
    let a = za.gather_rows(&ia)?;
    let b = zb.gather_rows(&jb)?;
    let times: Vec<f64> = alpha.iter().map(|al| (1.0 - al) * t_a + al * t_b).collect();
    let one_minus = tape.constant(Tensor::column(alpha.iter().map(|al| 1.0 - al).collect()));
    let z_alpha = a.mul(one_minus)?.add(b.mul(tape.constant(Tensor::column(alpha)))?)?;
    let target = b.sub(a)?.scale(1.0 / (t_b - t_a));
    let w = tape.constant(Tensor::column(weight));
    let residual = |v: Var<'t>| -> Result<Var<'t>> { v.sub(target)?.square().row_sum().mul(w).map(|x| x.sum()) };
    let fwd = residual(forward.velocity(tape, &times, z_alpha)?)?;
    let bwd = residual(backward.velocity(tape, &times, z_alpha)?)?;
    fwd.add(bwd)
}
