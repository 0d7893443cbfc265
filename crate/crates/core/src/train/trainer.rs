use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SnapshotDataset;
use crate::error::{Error, Result};
use crate::flow::eval_detached;
use crate::model::ModelBundle;
use crate::ot::{cost_bidirectional, cost_euclidean, sinkhorn_uniform, topk_truncate, SinkhornOptions};
use crate::tensor::{Adam, ParamGrads, Tape, Tensor};

use super::config::TrainConfig;
use super::fm::{fm_loss_topk, AlphaTable};
use super::global::{global_losses, GlobalOptions};
use super::log::{Phase, StepRecord, TrainLog};
use super::sample_indices;

const FIELD_PREFIX: &str = "field.";
const VAE_PREFIX: &str = "vae.";

/// Relative-improvement stopping rule on window means of a loss sequence.
#[derive(Clone, Debug)]
struct Plateau {
    window: usize,
    patience: usize,
    tol: f64,
    sum: f64,
    count: usize,
    best: f64,
    stale: usize,
}

impl Plateau {
    fn new(window: usize, patience: usize, tol: f64) -> Self {
        Plateau {
            window,
            patience,
            tol,
            sum: 0.0,
            count: 0,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Adds a value; true once `patience` consecutive windows failed to improve.
    fn observe(&mut self, value: f64) -> bool {
        self.sum += value;
        self.count += 1;
        if self.count < self.window {
            return false;
        }
        let mean = self.sum / self.count as f64;
        self.sum = 0.0;
        self.count = 0;
        if !self.best.is_finite() || mean < self.best - self.tol * self.best.abs() {
            self.best = mean;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience > 0 && self.stale >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub converged: bool,
    /// Phase-II step at which the stopping rule fired.
    pub converged_at: Option<usize>,
    pub vae_steps: usize,
    pub steps: usize,
    /// Long-horizon rollouts performed for the global losses.
    pub rollouts: usize,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub model: ModelBundle,
    pub log: TrainLog,
    pub summary: FitSummary,
}

/// Owns the model, optimizer state and random stream of one training run.
pub struct Trainer {
    config: TrainConfig,
    model: ModelBundle,
    data: SnapshotDataset,
    opt: Adam,
    rng: ChaCha8Rng,
    step: usize,
    vae_steps: usize,
    rollouts: usize,
    log: TrainLog,
    started: Option<Instant>,
    converged_at: Option<usize>,
}

impl Trainer {
    pub fn new(data: &SnapshotDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.len() < 2 {
            return Err(Error::Dataset(format!(
                "training needs at least 2 timepoints, got {}",
                data.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let times = data.times();
        let model = ModelBundle::init(
            data.genes().to_vec(),
            config.model.clone(),
            times[0],
            times[times.len() - 1],
            &mut rng,
        )?;
        Ok(Trainer {
            opt: Adam::new(config.learning_rate),
            config,
            model,
            data: data.clone(),
            rng,
            step: 0,
            vae_steps: 0,
            rollouts: 0,
            log: TrainLog::default(),
            started: None,
            converged_at: None,
        })
    }

    /// Fills the `seconds` column. Off by default so logs of equal runs are identical.
    pub fn record_time(&mut self, on: bool) {
        self.started = on.then(Instant::now);
    }

    pub fn model(&self) -> &ModelBundle {
        &self.model
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Phase-II steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn rollouts(&self) -> usize {
        self.rollouts
    }

    fn seconds(&self) -> Option<f64> {
        self.started.map(|s| s.elapsed().as_secs_f64())
    }

    fn sinkhorn_options(&self, max_iters: usize) -> SinkhornOptions {
        SinkhornOptions {
            max_iters,
            tol: self.config.sinkhorn_tol,
            scaling: Some(self.config.sinkhorn_scaling),
        }
    }

    /// Phase I: fits the VAE alone on shuffled minibatches of all training cells until
    /// `vae_epochs` or the epoch-mean loss plateaus. Fields are frozen meanwhile.
    pub fn pretrain(&mut self) -> Result<()> {
        let cells = self.data.all_cells();
        let n = cells.rows();
        let b = self.config.batch_size.min(n);
        let mut opt = Adam::new(self.config.learning_rate);
        let mut plateau = Plateau::new(1, self.config.vae_patience, self.config.convergence_tol);
        self.model.params.set_frozen(FIELD_PREFIX, true);
        let mut order: Vec<usize> = (0..n).collect();
        let result = (|| {
            for _ in 0..self.config.vae_epochs {
                order.shuffle(&mut self.rng);
                let mut epoch_sum = 0.0;
                let mut batches = 0;
                for chunk in order.chunks(b) {
                    let x = cells.select_rows(chunk);
                    let (value, grads) = {
                        let tape = Tape::new();
                        let (loss, _) =
                            self.model
                                .vae
                                .batch_loss(&tape, &self.model.params, &x, self.config.lambda_kl, &mut self.rng)?;
                        let g = tape.backward(loss.total)?;
                        (loss.total.item(), tape.param_grads(&g))
                    };
                    self.vae_steps += 1;
                    self.log.push(StepRecord {
                        step: self.vae_steps,
                        phase: Phase::Vae,
                        l_vae: value,
                        l_fm: None,
                        l_ot: None,
                        l_dyn: None,
                        total: value,
                        retained_mass: None,
                        seconds: self.seconds(),
                    });
                    check_finite(value, &grads, "VAE pretraining", self.vae_steps)?;
                    opt.step(&mut self.model.params, grads)?;
                    epoch_sum += value;
                    batches += 1;
                }
                if plateau.observe(epoch_sum / batches as f64) {
                    break;
                }
            }
            Ok(())
        })();
        self.model.params.set_frozen(FIELD_PREFIX, false);
        result
    }

    /// One Phase-II step; the step index `s` starts at 1.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let s = self.step + 1;
        let cfg = self.config.clone();
        if cfg.freeze_vae {
            self.model.params.set_frozen(VAE_PREFIX, true);
        }
        let times = self.data.times();
        let pair = self.rng.random_range(0..times.len() - 1);
        let (t_a, t_b) = (times[pair], times[pair + 1]);
        let snaps = self.data.snapshots();
        let ia = sample_indices(snaps[pair].cells.rows(), cfg.batch_size, &mut self.rng)?;
        let ib = sample_indices(snaps[pair + 1].cells.rows(), cfg.batch_size, &mut self.rng)?;
        let xa = snaps[pair].cells.select_rows(&ia);
        let xb = snaps[pair + 1].cells.select_rows(&ib);
        let phase = if s <= cfg.e_warm { Phase::Warmup } else { Phase::Fused };

        let tape = Tape::new();
        let model = &self.model;
        let x = Tensor::vstack(&[&xa, &xb])?;
        let (vae, enc) = model
            .vae
            .batch_loss(&tape, &model.params, &x, cfg.lambda_kl, &mut self.rng)?;
        let z = enc.z.value();
        let za = z.select_rows(&(0..xa.rows()).collect::<Vec<_>>());
        let zb = z.select_rows(&(xa.rows()..z.rows()).collect::<Vec<_>>());
        let (fwd, bwd) = (model.forward_field(), model.backward_field());
        let cost = match phase {
            Phase::Fused => cost_bidirectional(
                &za,
                &zb,
                |t, z| eval_detached(&fwd, t, z),
                |t, z| eval_detached(&bwd, t, z),
                t_a,
                t_b,
            )?,
            _ => cost_euclidean(&za, &zb)?,
        };
        let plan = sinkhorn_uniform(&cost, cfg.epsilon, &self.sinkhorn_options(cfg.sinkhorn_max_iters))?;
        let top = topk_truncate(&plan, cfg.top_k)?;
        let alphas = AlphaTable::sample(za.rows(), zb.rows(), cfg.alpha_samples, &mut self.rng);
        let fm = fm_loss_topk(&top, tape.constant(za), tape.constant(zb), t_a, t_b, &fwd, &bwd, &alphas)?;
        let mut total = vae.total.add(fm.scale(cfg.lambda_fm))?;

        let (mut l_ot, mut l_dyn) = (None, None);
        if s % cfg.k_ot == 0 && cfg.uses_global_losses() {
            let opts = GlobalOptions {
                batch_size: cfg.batch_size,
                epsilon: cfg.global_epsilon(),
                sinkhorn: self.sinkhorn_options(cfg.global_sinkhorn_iters),
                rk4_step: cfg.rk4_step,
                stochastic_source: true,
            };
            let g = global_losses(&tape, model, &self.data, &opts, &mut self.rng)?;
            self.rollouts += 1;
            l_ot = Some(g.ot.item());
            l_dyn = Some(g.latent.item());
            total = total.add(g.ot.scale(cfg.lambda_ot))?.add(g.latent.scale(cfg.lambda_dyn))?;
        }

        let record = StepRecord {
            step: s,
            phase,
            l_vae: vae.total.item(),
            l_fm: Some(fm.item()),
            l_ot,
            l_dyn,
            total: total.item(),
            retained_mass: Some(top.retained_mass()),
            seconds: self.seconds(),
        };
        let grads = tape.param_grads(&tape.backward(total)?);
        drop(tape);
        self.step = s;
        self.log.push(record.clone());
        check_finite(record.total, &grads, "joint training", s)?;
        self.opt.step(&mut self.model.params, grads)?;
        Ok(record)
    }

    /// Phase II until `max_steps` or the moving-average total stops improving. `on_checkpoint`
    /// runs every `checkpoint_every` steps.
    pub fn train(&mut self, mut on_checkpoint: impl FnMut(usize, &ModelBundle) -> Result<()>) -> Result<()> {
        let cfg = &self.config;
        let mut plateau = Plateau::new(cfg.convergence_window, cfg.patience, cfg.convergence_tol);
        while self.step < self.config.max_steps {
            let rec = self.train_step()?;
            if self.config.checkpoint_every > 0 && rec.step % self.config.checkpoint_every == 0 {
                on_checkpoint(rec.step, &self.model)?;
            }
            if plateau.observe(rec.total) {
                self.converged_at = Some(rec.step);
                break;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> FitOutput {
        self.model.params.set_frozen(VAE_PREFIX, false);
        FitOutput {
            summary: FitSummary {
                converged: self.converged_at.is_some(),
                converged_at: self.converged_at,
                vae_steps: self.vae_steps,
                steps: self.step,
                rollouts: self.rollouts,
            },
            model: self.model,
            log: self.log,
        }
    }
}

fn check_finite(total: f64, grads: &ParamGrads, stage: &str, step: usize) -> Result<()> {
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("{stage} loss at step {step} is {total}")));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite(format!("{stage} gradient at step {step}")));
    }
    Ok(())
}

/// Phase I then Phase II.
pub fn fit(data: &SnapshotDataset, config: &TrainConfig) -> Result<FitOutput> {
    fit_with(data, config, |_, _| Ok(()))
}

pub fn fit_with(
    data: &SnapshotDataset,
    config: &TrainConfig,
    on_checkpoint: impl FnMut(usize, &ModelBundle) -> Result<()>,
) -> Result<FitOutput> {
    let mut trainer = Trainer::new(data, config.clone())?;
    trainer.pretrain()?;
    trainer.train(on_checkpoint)?;
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthKind, SyntheticSpec};
    use crate::model::ModelConfig;

    fn tiny() -> (SnapshotDataset, TrainConfig) {
        let mut spec = SyntheticSpec::new(SynthKind::DriftGaussian, 2, 4, 24, 0.2, 9);
        spec.genes = Some(4);
        let cfg = TrainConfig {
            batch_size: 8,
            top_k: 2,
            e_warm: 3,
            k_ot: 2,
            max_steps: 8,
            vae_epochs: 3,
            model: ModelConfig {
                latent: 2,
                vae_hidden: 8,
                field_hidden: 8,
                time_dim: 4,
                leaky_slope: 0.01,
            },
            ..TrainConfig::default()
        };
        (synth_generate(&spec).unwrap(), cfg)
    }

    #[test]
    fn schedule_follows_step_index() {
        let (ds, cfg) = tiny();
        let out = fit(&ds, &cfg).unwrap();
        let phase2: Vec<_> = out.log.records.iter().filter(|r| r.phase != Phase::Vae).collect();
        assert_eq!(phase2.len(), 8);
        for r in phase2 {
            assert_eq!(r.phase == Phase::Warmup, r.step <= 3, "step {}", r.step);
            assert_eq!(r.l_ot.is_some(), r.step % 2 == 0, "step {}", r.step);
            assert!(r.total.is_finite() && r.total >= 0.0);
        }
        assert_eq!(out.summary.rollouts, 4);
    }

    #[test]
    fn no_rollouts_without_global_weights() {
        let (ds, cfg) = tiny();
        let cfg = TrainConfig {
            lambda_ot: 0.0,
            lambda_dyn: 0.0,
            ..cfg
        };
        let out = fit(&ds, &cfg).unwrap();
        assert_eq!(out.summary.rollouts, 0);
        assert!(out.log.records.iter().all(|r| r.l_ot.is_none()));
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let (ds, cfg) = tiny();
        let a = fit(&ds, &cfg).unwrap();
        let b = fit(&ds, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn zero_steps_keeps_initial_fields() {
        let (ds, cfg) = tiny();
        let cfg = TrainConfig { max_steps: 0, ..cfg };
        let out = fit(&ds, &cfg).unwrap();
        let fresh = Trainer::new(&ds, cfg).unwrap();
        for (name, value) in out.model.params.iter().filter(|(n, _)| n.starts_with(FIELD_PREFIX)) {
            assert_eq!(Some(value), fresh.model().params.get(name), "{name}");
        }
        assert!(out.model.params.iter().any(|(n, v)| n.starts_with(VAE_PREFIX) && fresh.model().params.get(n) != Some(v)));
        assert_eq!(out.summary.steps, 0);
    }

    #[test]
    fn frozen_vae_is_untouched_in_phase_two() {
        let (ds, cfg) = tiny();
        let cfg = TrainConfig { freeze_vae: true, ..cfg };
        let mut t = Trainer::new(&ds, cfg).unwrap();
        t.pretrain().unwrap();
        let before = t.model().params.clone();
        t.train(|_, _| Ok(())).unwrap();
        for (name, value) in t.model().params.iter() {
            let same = before.get(name) == Some(value);
            assert_eq!(same, name.starts_with(VAE_PREFIX), "{name}");
        }
    }

    #[test]
    fn single_timepoint_is_rejected() {
        let (ds, cfg) = tiny();
        let one = ds.subset(&[0]).unwrap();
        assert!(matches!(Trainer::new(&one, cfg), Err(Error::Dataset(_))));
    }

    #[test]
    fn plateau_fires_after_patience_windows() {
        let mut p = Plateau::new(2, 2, 1e-4);
        let seq = [4.0, 4.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let fired: Vec<bool> = seq.iter().map(|v| p.observe(*v)).collect();
        assert_eq!(fired, vec![false, false, false, false, false, false, false, true]);
    }

    #[test]
    fn checkpoints_every_n_steps() {
        let (ds, cfg) = tiny();
        let cfg = TrainConfig {
            checkpoint_every: 3,
            ..cfg
        };
        let mut seen = Vec::new();
        fit_with(&ds, &cfg, |s, _| {
            seen.push(s);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![3, 6]);
    }
}
