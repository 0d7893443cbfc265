use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

use super::embedding::TimeEmbedding;

/// A time-dependent vector field on the latent space, evaluated on a tape.
pub trait VelocityField {
    fn latent_dim(&self) -> usize;

    /// Velocity for each row of `z`. `times` holds one time per row, or a single
    /// time shared by all rows.
    fn velocity<'t>(&self, tape: &'t Tape, times: &[f64], z: Var<'t>) -> Result<Var<'t>>;
}

/// Evaluates a field on plain values.
pub fn eval_detached<F: VelocityField + ?Sized>(field: &F, t: f64, z: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let zv = tape.constant(z.clone());
    Ok(field.velocity(&tape, &[t], zv)?.value())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn prefix(self) -> &'static str {
        match self {
            Direction::Forward => "field.forward",
            Direction::Backward => "field.backward",
        }
    }
}

/// Residual MLP velocity network:
/// `h₁ = tanh([z, e(t)]W₀ + b₀)`, `h₂ = tanh(h₁W₁ + b₁) + h₁`,
/// `v = h₂W_out + b_out + zW_skip`.
///
/// The output layer starts small and the skip projection at zero, so a fresh
/// field is close to zero velocity and rollouts start near the identity map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldNet {
    pub direction: Direction,
    pub latent: usize,
    pub hidden: usize,
    pub embedding: TimeEmbedding,
}

impl FieldNet {
    pub fn new(direction: Direction, latent: usize, hidden: usize, embedding: TimeEmbedding) -> Self {
        FieldNet {
            direction,
            latent,
            hidden,
            embedding,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.direction.prefix())
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let input = self.latent + self.embedding.dim;
        store.init_linear(&self.name("input"), input, self.hidden, 1.0, rng);
        store.init_linear(&self.name("block"), self.hidden, self.hidden, 1.0, rng);
        store.init_linear(&self.name("out"), self.hidden, self.latent, 0.1, rng);
        store.insert(self.name("skip.weight"), Tensor::zeros(self.latent, self.latent));
    }

    pub fn bind<'a>(&'a self, store: &'a ParamStore) -> BoundField<'a> {
        BoundField { net: self, store }
    }
}

/// A [`FieldNet`] paired with the parameters it reads.
#[derive(Clone, Copy)]
pub struct BoundField<'a> {
    net: &'a FieldNet,
    store: &'a ParamStore,
}

impl VelocityField for BoundField<'_> {
    fn latent_dim(&self) -> usize {
        self.net.latent
    }

    fn velocity<'t>(&self, tape: &'t Tape, times: &[f64], z: Var<'t>) -> Result<Var<'t>> {
        let net = self.net;
        let (rows, d) = z.shape();
        if d != net.latent {
            return Err(Error::ShapeMismatch {
                op: "eval_field",
                left: (rows, d),
                right: (rows, net.latent),
            });
        }
        if times.len() != 1 && times.len() != rows {
            return Err(Error::invalid(
                "eval_field",
                format!("{} times for {rows} rows", times.len()),
            ));
        }
        let p = |part: &str| tape.param(self.store, &net.name(part));
        let w_in = p("input.weight")?;
        // [z, e]·W₀ split as z·W₀[..d] + e·W₀[d..]; a shared time broadcasts as one row
        let w_z = w_in.slice_rows(0, d)?;
        let w_t = w_in.slice_rows(d, d + net.embedding.dim)?;
        let emb = tape.constant(net.embedding.embed_rows(times));
        let pre = z.matmul(w_z)?.add(emb.matmul(w_t)?)?.add(p("input.bias")?)?;
        let h1 = pre.tanh();
        let h2 = h1.matmul(p("block.weight")?)?.add(p("block.bias")?)?.tanh().add(h1)?;
        let out = h2.matmul(p("out.weight")?)?.add(p("out.bias")?)?;
        out.add(z.matmul(p("skip.weight")?)?)
    }
}

/// `v(t, z) = 0`.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField(pub usize);

impl VelocityField for ZeroField {
    fn latent_dim(&self) -> usize {
        self.0
    }

    fn velocity<'t>(&self, tape: &'t Tape, _times: &[f64], z: Var<'t>) -> Result<Var<'t>> {
        Ok(tape.constant(Tensor::zeros(z.rows(), z.cols())))
    }
}

/// `v(t, z) = c`.
#[derive(Clone, Debug)]
pub struct ConstantField(pub Vec<f64>);

impl VelocityField for ConstantField {
    fn latent_dim(&self) -> usize {
        self.0.len()
    }

    fn velocity<'t>(&self, tape: &'t Tape, _times: &[f64], z: Var<'t>) -> Result<Var<'t>> {
        let c = tape.constant(Tensor::new(1, self.0.len(), self.0.clone())?);
        // broadcast the row to the batch while staying on the tape
        z.scale(0.0).add(c)
    }
}

/// `v(t, z) = A z` (applied rowwise as `z Aᵀ`).
#[derive(Clone, Debug)]
pub struct LinearField(pub Tensor);

impl VelocityField for LinearField {
    fn latent_dim(&self) -> usize {
        self.0.rows()
    }

    fn velocity<'t>(&self, tape: &'t Tape, _times: &[f64], z: Var<'t>) -> Result<Var<'t>> {
        z.matmul(tape.constant(self.0.transpose()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> (FieldNet, ParamStore) {
        let net = FieldNet::new(Direction::Forward, 3, 16, TimeEmbedding::new(8, 0.0, 5.0));
        let mut store = ParamStore::new();
        net.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        (net, store)
    }

    #[test]
    fn zero_weights_give_zero_velocity() {
        let (net, mut store) = net();
        store.zero_prefix("field.forward");
        let z = Tensor::from_fn(4, 3, |r, c| (r as f64) - (c as f64));
        let v = eval_detached(&net.bind(&store), 1.3, &z).unwrap();
        assert!(v.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rowwise_permutation_equivariance() {
        let (net, store) = net();
        let z = Tensor::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.17 - 1.0);
        let perm = [3, 0, 4, 1, 2];
        let v = eval_detached(&net.bind(&store), 2.0, &z).unwrap();
        let vp = eval_detached(&net.bind(&store), 2.0, &z.select_rows(&perm)).unwrap();
        assert_eq!(vp, v.select_rows(&perm));
    }

    #[test]
    fn per_row_times_match_shared_time() {
        let (net, store) = net();
        let z = Tensor::from_fn(3, 3, |r, c| (r + c) as f64 * 0.1);
        let field = net.bind(&store);
        let tape = Tape::new();
        let a = field.velocity(&tape, &[0.7], tape.constant(z.clone())).unwrap().value();
        let b = field.velocity(&tape, &[0.7; 3], tape.constant(z)).unwrap().value();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (net, store) = net();
        assert!(eval_detached(&net.bind(&store), 0.0, &Tensor::zeros(2, 4)).is_err());
    }

    #[test]
    fn forward_and_backward_params_are_disjoint() {
        let emb = TimeEmbedding::new(8, 0.0, 1.0);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        FieldNet::new(Direction::Forward, 2, 4, emb.clone()).init(&mut store, &mut rng);
        let n = store.len();
        FieldNet::new(Direction::Backward, 2, 4, emb).init(&mut store, &mut rng);
        assert_eq!(store.len(), 2 * n);
    }
}
