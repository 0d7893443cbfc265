use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SnapshotDataset;
use crate::error::{Error, Result};
use crate::flow::{integrate_detached, Method};
use crate::model::ModelBundle;
use crate::tensor::Tensor;
use crate::train::sample_indices;

pub const PREDICT_RK4_STEP: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionProvenance {
    /// Checkpoint the model was loaded from, when known.
    pub checkpoint: Option<String>,
    pub method: Method,
    pub step: f64,
    pub seed: u64,
    pub source_time: f64,
}

/// Generated cells at one query time.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub time: f64,
    pub cells: Tensor,
    pub provenance: PredictionProvenance,
}

impl PredictionSet {
    /// Headerless `time,gene_1,…` rows, the layout of dataset files.
    pub fn write_csv(&self, genes: &[String], w: impl std::io::Write) -> Result<()> {
        let ds = SnapshotDataset::new(
            genes.to_vec(),
            vec![crate::data::Snapshot {
                time: self.time,
                cells: self.cells.clone(),
            }],
            Default::default(),
        )?;
        ds.write_csv(w)
    }
}

fn check_genes(model: &ModelBundle, data: &SnapshotDataset) -> Result<()> {
    if model.genes() != data.num_genes() {
        return Err(Error::Dataset(format!(
            "model expects {} genes, dataset has {}",
            model.genes(),
            data.num_genes()
        )));
    }
    Ok(())
}

/// Samples `n` cells from the earliest snapshot of `data` (with replacement when it has fewer),
/// encodes them with reparameterization noise, integrates the forward field with RK4 to each
/// query time and decodes. Results follow the order of `times`.
pub fn predict(model: &ModelBundle, data: &SnapshotDataset, times: &[f64], n: usize, seed: u64) -> Result<Vec<PredictionSet>> {
    check_genes(model, data)?;
    if n == 0 {
        return Err(Error::invalid("predict", "number of cells must be positive"));
    }
    let source = &data.snapshots()[0];
    let t0 = source.time;
    if let Some(&bad) = times.iter().find(|t| !(**t >= t0)) {
        return Err(Error::invalid(
            "predict",
            format!("query time {bad} precedes the first observed time {t0}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample_indices(source.cells.rows(), n, &mut rng)?;
    let x0 = source.cells.select_rows(&idx);
    let noise = model.vae.sample_noise(n, &mut rng);
    let z0 = model.encode(&x0, Some(&noise))?;

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let states = integrate_detached(&model.forward_field(), &z0, t0, &sorted, Method::Rk4, PREDICT_RK4_STEP)?;
    let mut out: Vec<Option<PredictionSet>> = vec![None; times.len()];
    for (&i, z) in order.iter().zip(&states) {
        let cells = model.decode(z)?;
        if !cells.is_finite() {
            return Err(Error::NonFinite(format!("prediction at t = {}", times[i])));
        }
        out[i] = Some(PredictionSet {
            time: times[i],
            cells,
            provenance: PredictionProvenance {
                checkpoint: None,
                method: Method::Rk4,
                step: PREDICT_RK4_STEP,
                seed,
                source_time: t0,
            },
        });
    }
    Ok(out.into_iter().map(|p| p.expect("every query filled")).collect())
}

/// Replays the latest snapshot of `train` at or before `time`.
pub fn naive_baseline(train: &SnapshotDataset, time: f64) -> Result<PredictionSet> {
    let snap = train
        .snapshots()
        .iter()
        .rev()
        .find(|s| s.time <= time + 1e-9)
        .ok_or_else(|| Error::invalid("naive_baseline", format!("no training time precedes {time}")))?;
    Ok(PredictionSet {
        time,
        cells: snap.cells.clone(),
        provenance: PredictionProvenance {
            checkpoint: None,
            method: Method::Euler,
            step: 0.0,
            seed: 0,
            source_time: snap.time,
        },
    })
}
