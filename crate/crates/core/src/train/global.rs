//! Distribution-level losses on long forward rollouts from the first snapshot.

use rand::Rng;

use crate::data::SnapshotDataset;
use crate::error::{Error, Result};
use crate::flow::{integrate, Method};
use crate::model::ModelBundle;
use crate::ot::{sinkhorn_uniform, sq_dists, CostKind, CostMatrix, SinkhornOptions};
use crate::tensor::{Tape, Tensor, Var};

use super::sample_indices;

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalOptions {
    pub batch_size: usize,
    pub epsilon: f64,
    pub sinkhorn: SinkhornOptions,
    pub rk4_step: f64,
    /// Reparameterized source latents; `false` uses the encoder means.
    pub stochastic_source: bool,
}

/// Both global losses from one rollout, with the per-timepoint terms.
#[derive(Clone, Debug)]
pub struct GlobalLosses<'t> {
    /// Mean over training times of the gene-space transport cost.
    pub ot: Var<'t>,
    /// Mean over training times of the latent transport cost to encoder latents.
    pub latent: Var<'t>,
    pub ot_terms: Vec<f64>,
    pub latent_terms: Vec<f64>,
}

/// `⟨π, C⟩` with squared Euclidean `C` between `pred` and the fixed points `obs`, where the
/// entropic plan `π` is solved on the current values and then held constant.
///
/// Written as `Σ_i a_i‖p_i − m_i‖² + s`, with `a` the plan's row sums, `m_i` the barycentric
/// targets and `s ≥ 0` the plan's spread around them, so the value is nonnegative.
pub fn transport_term<'t>(pred: Var<'t>, obs: &Tensor, epsilon: f64, opts: &SinkhornOptions) -> Result<Var<'t>> {
    let p = pred.value();
    let cost = CostMatrix::new(sq_dists(&p, obs)?, CostKind::GeneSpace)?;
    let plan = sinkhorn_uniform(&cost, epsilon, opts)?.plan().clone();
    let weights: Vec<f64> = plan.iter_rows().map(|r| r.iter().sum()).collect();
    let moved = plan.matmul(obs)?;
    let mut bary = moved.clone();
    let mut spread = 0.0;
    for (j, o) in obs.iter_rows().enumerate() {
        let sq: f64 = o.iter().map(|v| v * v).sum();
        spread += (0..plan.rows()).map(|i| plan.get(i, j)).sum::<f64>() * sq;
    }
    for (i, &a) in weights.iter().enumerate() {
        for c in 0..bary.cols() {
            let v = if a > 0.0 { moved.get(i, c) / a } else { 0.0 };
            bary.set(i, c, v);
            spread -= a * v * v;
        }
    }
    let tape = pred.tape();
    pred.sub(tape.constant(bary))?
        .square()
        .row_sum()
        .mul(tape.constant(Tensor::column(weights)))?
        .sum()
        .add(tape.scalar(spread.max(0.0)))
}

/// Encodes a batch from the first snapshot, rolls it forward with RK4 to every snapshot
/// time, and compares the rollout with an observed batch at each time: decoded, in gene
/// space, and as latents, against the deterministic encoding of that batch. The batch
/// at the first time is the source batch itself.
pub fn global_losses<'t>(
    tape: &'t Tape,
    model: &ModelBundle,
    data: &SnapshotDataset,
    opts: &GlobalOptions,
    rng: &mut impl Rng,
) -> Result<GlobalLosses<'t>> {
    if data.is_empty() {
        return Err(Error::Dataset("no training timepoints".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("global_losses", "batch size must be positive"));
    }
    let snaps = data.snapshots();
    let source = snaps[0].cells.select_rows(&sample_indices(snaps[0].cells.rows(), opts.batch_size, rng)?);
    let noise = opts
        .stochastic_source
        .then(|| model.vae.sample_noise(source.rows(), rng));
    let enc = model
        .vae
        .encode(tape, &model.params, tape.constant(source.clone()), noise.as_ref())?;
    let times = data.times();
    let field = model.forward_field();
    let rollout = integrate(&field, tape, enc.z, times[0], &times, Method::Rk4, opts.rk4_step)?;

    let mut ot_sum = tape.scalar(0.0);
    let mut lat_sum = tape.scalar(0.0);
    let (mut ot_terms, mut latent_terms) = (Vec::new(), Vec::new());
    for (k, (snap, &state)) in snaps.iter().zip(&rollout.states).enumerate() {
        let observed = if k == 0 {
            source.clone()
        } else {
            snap.cells.select_rows(&sample_indices(snap.cells.rows(), opts.batch_size, rng)?)
        };
        let decoded = model.vae.decode(tape, &model.params, state)?;
        let ot = transport_term(decoded, &observed, opts.epsilon, &opts.sinkhorn)?;
        let target = model.encode(&observed, None)?;
        let lat = transport_term(state, &target, opts.epsilon, &opts.sinkhorn)?;
        ot_terms.push(ot.item());
        latent_terms.push(lat.item());
        ot_sum = ot_sum.add(ot)?;
        lat_sum = lat_sum.add(lat)?;
    }
    let m = snaps.len() as f64;
    Ok(GlobalLosses {
        ot: ot_sum.scale(1.0 / m),
        latent: lat_sum.scale(1.0 / m),
        ot_terms,
        latent_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthKind, SyntheticSpec};
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts() -> GlobalOptions {
        GlobalOptions {
            batch_size: 32,
            epsilon: 0.0025,
            sinkhorn: SinkhornOptions {
                max_iters: 2000,
                tol: 1e-9,
                scaling: Some(0.5),
            },
            rk4_step: 0.1,
            stochastic_source: true,
        }
    }

    fn setup(drift: f64) -> (ModelBundle, SnapshotDataset) {
        let mut spec = SyntheticSpec::new(SynthKind::DriftGaussian, 2, 4, 40, 0.1, 3);
        spec.genes = Some(5);
        spec.drift = drift;
        let ds = synth_generate(&spec).unwrap();
        let cfg = ModelConfig {
            latent: 3,
            vae_hidden: 16,
            field_hidden: 16,
            time_dim: 4,
            leaky_slope: 0.01,
        };
        let model = ModelBundle::init(ds.genes().to_vec(), cfg, 0.0, 3.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (model, ds)
    }

    #[test]
    fn self_transport_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(20, 4, |_, _| rng.random_range(-3.0..3.0));
        let tape = Tape::new();
        let t = transport_term(tape.constant(x.clone()), &x, 0.0025, &opts().sinkhorn).unwrap();
        assert!(t.item().abs() < 1e-6, "{}", t.item());
    }

    #[test]
    fn transport_term_matches_plan_cost_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = Tensor::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let o = Tensor::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0));
        let so = SinkhornOptions::default();
        let tape = Tape::new();
        let pv = tape.leaf(p.clone());
        let term = transport_term(pv, &o, 0.3, &so).unwrap();
        let cost = CostMatrix::new(sq_dists(&p, &o).unwrap(), CostKind::GeneSpace).unwrap();
        let pi = sinkhorn_uniform(&cost, 0.3, &so).unwrap();
        assert!((term.item() - pi.transport_cost(&cost)).abs() < 1e-12);
        // ∂/∂p_i ⟨π, C⟩ = 2 Σ_j π_ij (p_i − o_j)
        let g = tape.backward(term).unwrap().get(pv).unwrap();
        for i in 0..6 {
            for c in 0..3 {
                let want: f64 = (0..7).map(|j| 2.0 * pi.plan().get(i, j) * (p.get(i, c) - o.get(j, c))).sum();
                assert!((g.get(i, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_latent_term_vanishes_with_deterministic_source() {
        let (model, ds) = setup(1.0);
        let tape = Tape::new();
        let o = GlobalOptions {
            stochastic_source: false,
            ..opts()
        };
        let g = global_losses(&tape, &model, &ds, &o, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // the entropic plan spreads mass over neighbours closer than the blur, which costs at
        // most about ε per latent dimension
        assert!(g.latent_terms[0] < o.epsilon * model.latent() as f64, "{:?}", g.latent_terms);
        assert!(g.latent_terms[0] < 0.05 * g.latent_terms[1]);
        assert_eq!(g.ot_terms.len(), ds.len());
    }

    #[test]
    fn untrained_model_pays_positive_costs() {
        let (model, ds) = setup(1.0);
        let tape = Tape::new();
        let g = global_losses(&tape, &model, &ds, &opts(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(g.ot.item() > 0.0 && g.latent.item() >= 0.0);
        assert!(g.latent_terms.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn static_field_falls_behind_moving_data() {
        let (mut model, ds) = setup(2.0);
        model.params.zero_prefix("field.forward");
        let tape = Tape::new();
        let o = GlobalOptions {
            stochastic_source: false,
            ..opts()
        };
        let g = global_losses(&tape, &model, &ds, &o, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(g.latent_terms.windows(2).all(|w| w[1] > w[0]), "{:?}", g.latent_terms);
    }
}
