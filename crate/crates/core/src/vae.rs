//! Gaussian-encoder VAE between gene space and the latent space.
//!
//! Encoder: `G → hidden → (μ, log σ)` with a leaky-ReLU hidden layer; the two
//! heads together form the `2d`-wide encoder output. Decoder: `d → hidden → G`.
//! Parameters live in a [`ParamStore`] under `vae.encoder.*` / `vae.decoder.*`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

pub const ENCODER_PREFIX: &str = "vae.encoder";
pub const DECODER_PREFIX: &str = "vae.decoder";

const LOG_SIGMA_BOUND: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeShape {
    pub genes: usize,
    pub latent: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
}

/// Output of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct Encoded<'t> {
    pub mu: Var<'t>,
    /// Clamped to ±5.
    pub log_sigma: Var<'t>,
    pub sigma: Var<'t>,
    pub z: Var<'t>,
}

#[derive(Clone, Copy, Debug)]
pub struct VaeLoss<'t> {
    pub total: Var<'t>,
    pub reconstruction: Var<'t>,
    pub kl: Var<'t>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vae {
    pub shape: VaeShape,
}

fn linear<'t>(tape: &'t Tape, store: &ParamStore, prefix: &str, x: Var<'t>) -> Result<Var<'t>> {
    let w = tape.param(store, &format!("{prefix}.weight"))?;
    let b = tape.param(store, &format!("{prefix}.bias"))?;
    x.matmul(w)?.add(b)
}

impl Vae {
    pub fn new(shape: VaeShape) -> Self {
        Vae { shape }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let VaeShape { genes, latent, hidden, .. } = self.shape;
        let gain = 2f64.sqrt();
        store.init_linear(&format!("{ENCODER_PREFIX}.hidden"), genes, hidden, gain, rng);
        store.init_linear(&format!("{ENCODER_PREFIX}.mu"), hidden, latent, 1.0, rng);
        store.init_linear(&format!("{ENCODER_PREFIX}.log_sigma"), hidden, latent, 0.1, rng);
        store.init_linear(&format!("{DECODER_PREFIX}.hidden"), latent, hidden, gain, rng);
        store.init_linear(&format!("{DECODER_PREFIX}.out"), hidden, genes, 1.0, rng);
    }

    /// Standard normal noise of the latent shape for `rows` cells.
    pub fn sample_noise(&self, rows: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(rows, self.shape.latent, |_, _| StandardNormal.sample(rng))
    }

    /// `z = μ + σ ⊙ noise`; without noise, `z = μ`.
    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        noise: Option<&Tensor>,
    ) -> Result<Encoded<'t>> {
        if x.cols() != self.shape.genes {
            return Err(Error::ShapeMismatch {
                op: "encode",
                left: x.shape(),
                right: (x.rows(), self.shape.genes),
            });
        }
        if !x.value().is_finite() {
            return Err(Error::NonFinite("encoder input".into()));
        }
        let h = linear(tape, store, &format!("{ENCODER_PREFIX}.hidden"), x)?.leaky_relu(self.shape.leaky_slope);
        let mu = linear(tape, store, &format!("{ENCODER_PREFIX}.mu"), h)?;
        let log_sigma =
            linear(tape, store, &format!("{ENCODER_PREFIX}.log_sigma"), h)?.clamp(-LOG_SIGMA_BOUND, LOG_SIGMA_BOUND);
        let sigma = log_sigma.exp();
        let z = match noise {
            Some(n) => {
                if n.shape() != mu.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "encode",
                        left: mu.shape(),
                        right: n.shape(),
                    });
                }
                mu.add(sigma.mul(tape.constant(n.clone()))?)?
            }
            None => mu,
        };
        Ok(Encoded {
            mu,
            log_sigma,
            sigma,
            z,
        })
    }

    pub fn decode<'t>(&self, tape: &'t Tape, store: &ParamStore, z: Var<'t>) -> Result<Var<'t>> {
        if z.cols() != self.shape.latent {
            return Err(Error::ShapeMismatch {
                op: "decode",
                left: z.shape(),
                right: (z.rows(), self.shape.latent),
            });
        }
        let h = linear(tape, store, &format!("{DECODER_PREFIX}.hidden"), z)?.leaky_relu(self.shape.leaky_slope);
        linear(tape, store, &format!("{DECODER_PREFIX}.out"), h)
    }

    /// Per-cell squared reconstruction error plus `λ_KL` times the Gaussian KL, both
    /// averaged over the batch.
    pub fn loss<'t>(&self, x: Var<'t>, encoded: &Encoded<'t>, recon: Var<'t>, lambda_kl: f64) -> Result<VaeLoss<'t>> {
        if x.rows() == 0 {
            return Err(Error::invalid("vae_loss", "empty batch"));
        }
        let reconstruction = x.sub(recon)?.square().row_sum().mean();
        let kl = gaussian_kl(encoded.mu, encoded.log_sigma)?;
        let total = reconstruction.add(kl.scale(lambda_kl))?;
        Ok(VaeLoss {
            total,
            reconstruction,
            kl,
        })
    }

    /// Encodes with fresh noise, decodes, and returns the loss.
    pub fn batch_loss<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: &Tensor,
        lambda_kl: f64,
        rng: &mut impl Rng,
    ) -> Result<(VaeLoss<'t>, Encoded<'t>)> {
        let xv = tape.constant(x.clone());
        let noise = self.sample_noise(x.rows(), rng);
        let enc = self.encode(tape, store, xv, Some(&noise))?;
        let recon = self.decode(tape, store, enc.z)?;
        Ok((self.loss(xv, &enc, recon, lambda_kl)?, enc))
    }
}

/// Batch mean of `KL(N(μ, σ²) ‖ N(0, I)) = ½Σ(μ² + σ² − 1 − log σ²)`.
pub fn gaussian_kl<'t>(mu: Var<'t>, log_sigma: Var<'t>) -> Result<Var<'t>> {
    let tape = mu.tape();
    let sigma_sq = log_sigma.scale(2.0).exp();
    let per = mu
        .square()
        .add(sigma_sq)?
        .sub(tape.scalar(1.0))?
        .sub(log_sigma.scale(2.0))?;
    Ok(per.row_sum().mean().scale(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (Vae, ParamStore) {
        let vae = Vae::new(VaeShape {
            genes: 4,
            latent: 2,
            hidden: 8,
            leaky_slope: 0.01,
        });
        let mut store = ParamStore::new();
        vae.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        (vae, store)
    }

    #[test]
    fn kl_closed_form() {
        let tape = Tape::new();
        let mu = tape.constant(Tensor::zeros(3, 2));
        let ls = tape.constant(Tensor::zeros(3, 2));
        assert_eq!(gaussian_kl(mu, ls).unwrap().item(), 0.0);
        let mu = tape.constant(Tensor::new(1, 2, vec![1.0, 0.0]).unwrap());
        let ls = tape.constant(Tensor::zeros(1, 2));
        assert!((gaussian_kl(mu, ls).unwrap().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn deterministic_mode_returns_mean() {
        let (vae, store) = small();
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(5, 4, |r, c| (r * 4 + c) as f64 * 0.1));
        let enc = vae.encode(&tape, &store, x, None).unwrap();
        assert_eq!(enc.z.value(), enc.mu.value());
        assert!(enc.sigma.value().data().iter().all(|s| *s > 0.0));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (vae, store) = small();
        let x = Tensor::from_fn(5, 4, |r, c| (r + c) as f64);
        let run = || {
            let tape = Tape::new();
            let noise = vae.sample_noise(5, &mut ChaCha8Rng::seed_from_u64(42));
            let xv = tape.constant(x.clone());
            vae.encode(&tape, &store, xv, Some(&noise)).unwrap().z.value()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reparameterized_mean_matches_mu() {
        let (vae, store) = small();
        let n = 10_000;
        let x = Tensor::from_fn(n, 4, |_, c| c as f64 * 0.3 - 0.2);
        let tape = Tape::new();
        let noise = vae.sample_noise(n, &mut ChaCha8Rng::seed_from_u64(5));
        let enc = vae.encode(&tape, &store, tape.constant(x), Some(&noise)).unwrap();
        let (z, mu, sigma) = (enc.z.value(), enc.mu.value(), enc.sigma.value());
        for c in 0..2 {
            let mean: f64 = (0..n).map(|r| z.get(r, c) - mu.get(r, c)).sum::<f64>() / n as f64;
            let bound = 3.0 / (n as f64).sqrt() * sigma.get(0, c);
            assert!(mean.abs() < bound, "coordinate {c}: {mean} vs {bound}");
        }
    }

    #[test]
    fn zero_decoder_outputs_zero() {
        let (vae, mut store) = small();
        store.zero_prefix(DECODER_PREFIX);
        let tape = Tape::new();
        let out = vae.decode(&tape, &store, tape.constant(Tensor::full(7, 2, 1.5))).unwrap();
        assert_eq!(out.shape(), (7, 4));
        assert!(out.value().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn perfect_reconstruction_without_kl_is_zero() {
        let (vae, store) = small();
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(3, 4, 0.5));
        let enc = vae.encode(&tape, &store, x, None).unwrap();
        let loss = vae.loss(x, &enc, x, 0.0).unwrap();
        assert_eq!(loss.total.item(), 0.0);
    }

    #[test]
    fn input_errors() {
        let (vae, store) = small();
        let tape = Tape::new();
        assert!(vae.encode(&tape, &store, tape.constant(Tensor::zeros(2, 3)), None).is_err());
        let mut bad = Tensor::zeros(1, 4);
        bad.set(0, 1, f64::NAN);
        assert!(vae.encode(&tape, &store, tape.constant(bad), None).is_err());
        assert!(vae.decode(&tape, &store, tape.constant(Tensor::zeros(2, 3))).is_err());
    }

    proptest::proptest! {
        #[test]
        fn loss_and_kl_are_nonnegative(seed in 0u64..10_000, rows in 1usize..6, lambda_kl in 0.0f64..2.0) {
            let (vae, mut store) = small();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            vae.init(&mut store, &mut rng);
            let x = Tensor::from_fn(rows, 4, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0));
            let tape = Tape::new();
            let (loss, _) = vae.batch_loss(&tape, &store, &x, lambda_kl, &mut rng).unwrap();
            proptest::prop_assert!(loss.kl.item() >= 0.0);
            proptest::prop_assert!(loss.total.item() >= 0.0);
        }
    }
}
