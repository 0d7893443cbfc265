use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{HoldoutSplit, SnapshotDataset, Task};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::ot::{ot_distance, OtDistanceOptions};
use crate::parallel::map_rows;
use crate::tensor::Tensor;

use super::predict::{naive_baseline, predict};

/// Cap on generated cells per held-out time.
pub const MAX_PREDICTED_CELLS: usize = 1000;

/// `(1/(n₁n₂))·Σ_i Σ_j ‖x_i − y_j‖₂`.
pub fn l2_metric(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::invalid("l2_metric", "empty point set"));
    }
    if x.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            op: "l2_metric",
            left: x.shape(),
            right: y.shape(),
        });
    }
    let per_row = map_rows(x.rows(), |i| {
        let a = x.row(i);
        y.iter_rows()
            .map(|b| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .sum::<f64>()
    });
    Ok(per_row.iter().sum::<f64>() / (x.rows() * y.rows()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub time: f64,
    pub task: Task,
    pub wasserstein: f64,
    pub l2: f64,
    pub n_true: usize,
    pub n_pred: usize,
    pub naive_wasserstein: f64,
    pub naive_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: Task,
    pub count: usize,
    pub wasserstein: f64,
    pub l2: f64,
    pub naive_wasserstein: f64,
    pub naive_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<TaskSummary>,
    /// Whether `wasserstein` is the debiased Sinkhorn divergence.
    pub debiased: bool,
    pub blur: f64,
    pub scaling: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    pub ot: OtDistanceOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 0,
            ot: OtDistanceOptions::default(),
        }
    }
}

fn summarize(rows: &[MetricRow]) -> Vec<TaskSummary> {
    [Task::Interp, Task::Extrap]
        .into_iter()
        .filter_map(|task| {
            let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.task == task).collect();
            if sel.is_empty() {
                return None;
            }
            let n = sel.len() as f64;
            let mean = |f: fn(&MetricRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            Some(TaskSummary {
                task,
                count: sel.len(),
                wasserstein: mean(|r| r.wasserstein),
                l2: mean(|r| r.l2),
                naive_wasserstein: mean(|r| r.naive_wasserstein),
                naive_l2: mean(|r| r.naive_l2),
            })
        })
        .collect()
}

/// Scores the model and the naive baseline at every held-out time of `split`.
/// `train` is the training part of the data; `split` must carry the held-out snapshots.
pub fn evaluate(model: &ModelBundle, train: &SnapshotDataset, split: &HoldoutSplit, opts: &EvalOptions) -> Result<MetricReport> {
    if split.truth.is_empty() {
        return Err(Error::invalid("evaluate", "split has no held-out snapshots"));
    }
    if model.genes() != train.num_genes() {
        return Err(Error::Dataset(format!(
            "model expects {} genes, dataset has {}",
            model.genes(),
            train.num_genes()
        )));
    }
    let mut rows = Vec::with_capacity(split.truth.len());
    for (task, truth) in &split.truth {
        let n_true = truth.cells.rows();
        let n_pred = n_true.min(MAX_PREDICTED_CELLS);
        let pred = predict(model, train, &[truth.time], n_pred, opts.seed)?.remove(0);
        let naive = naive_baseline(train, truth.time)?;
        rows.push(MetricRow {
            time: truth.time,
            task: *task,
            wasserstein: ot_distance(&truth.cells, &pred.cells, &opts.ot)?,
            l2: l2_metric(&truth.cells, &pred.cells)?,
            n_true,
            n_pred,
            naive_wasserstein: ot_distance(&truth.cells, &naive.cells, &opts.ot)?,
            naive_l2: l2_metric(&truth.cells, &naive.cells)?,
        });
    }
    Ok(MetricReport {
        summary: summarize(&rows),
        rows,
        debiased: opts.ot.debiased,
        blur: opts.ot.blur,
        scaling: opts.ot.scaling,
        seed: opts.seed,
    })
}

impl MetricReport {
    /// Builds a report from rows, with summaries recomputed.
    pub fn from_rows(rows: Vec<MetricRow>, ot: &OtDistanceOptions, seed: u64) -> Self {
        MetricReport {
            summary: summarize(&rows),
            rows,
            debiased: ot.debiased,
            blur: ot.blur,
            scaling: ot.scaling,
            seed,
        }
    }

    /// Per-holdout rows followed by one `mean` row per task.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "time",
            "task",
            "wasserstein",
            "l2",
            "n_true",
            "n_pred",
            "naive_wasserstein",
            "naive_l2",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.time.to_string(),
                r.task.as_str().to_string(),
                r.wasserstein.to_string(),
                r.l2.to_string(),
                r.n_true.to_string(),
                r.n_pred.to_string(),
                r.naive_wasserstein.to_string(),
                r.naive_l2.to_string(),
            ])?;
        }
        for s in &self.summary {
            out.write_record([
                "mean".to_string(),
                s.task.as_str().to_string(),
                s.wasserstein.to_string(),
                s.l2.to_string(),
                String::new(),
                String::new(),
                s.naive_wasserstein.to_string(),
                s.naive_l2.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io(Path::new("<metric report>"), e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
