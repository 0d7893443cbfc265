use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::dataset::{Normalization, Snapshot, SnapshotDataset};

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Library-size normalization to the median library, `log1p`, then the `target_hvg`
/// genes with the largest variance across all cells. Selected genes keep their
/// original column order.
pub fn preprocess(ds: &SnapshotDataset, target_hvg: usize) -> Result<SnapshotDataset> {
    let g = ds.num_genes();
    if target_hvg == 0 {
        return Err(Error::invalid("preprocess", "target_hvg must be at least 1"));
    }
    let mut libs = Vec::new();
    for (idx, row) in ds.snapshots().iter().flat_map(|s| s.cells.iter_rows()).enumerate() {
        if row.iter().any(|v| *v < 0.0) {
            return Err(Error::Dataset(format!("cell {idx} has negative counts")));
        }
        let lib: f64 = row.iter().sum();
        if lib == 0.0 {
            return Err(Error::Dataset(format!("cell {idx} has zero total counts")));
        }
        libs.push(lib);
    }
    let target = median(&mut libs.clone());

    let mut cell = 0;
    let mut normalized = Vec::with_capacity(ds.len());
    for s in ds.snapshots() {
        let mut m = s.cells.clone();
        for r in 0..m.rows() {
            let scale = target / libs[cell];
            cell += 1;
            for c in 0..g {
                m.set(r, c, (m.get(r, c) * scale).ln_1p());
            }
        }
        normalized.push(m);
    }

    let n_cells = libs.len() as f64;
    let mut mean = vec![0.0; g];
    for m in &normalized {
        for row in m.iter_rows() {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= n_cells);
    let mut var = vec![0.0; g];
    for m in &normalized {
        for row in m.iter_rows() {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= n_cells);

    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(target_hvg.min(g)).collect();
    keep.sort_unstable();

    let genes: Vec<String> = keep.iter().map(|&j| ds.genes()[j].clone()).collect();
    let snaps = ds
        .snapshots()
        .iter()
        .zip(normalized)
        .map(|(s, m)| Snapshot {
            time: s.time,
            cells: Tensor::from_fn(m.rows(), keep.len(), |r, c| m.get(r, keep[c])),
        })
        .collect();
    let mut prov = ds.provenance.clone();
    prov.log_normalized = true;
    prov.normalization = Some(Normalization {
        target_library_size: target,
        transform: "log1p".into(),
        hvg_rule: "variance".into(),
        hvg_requested: target_hvg,
        genes_in: g,
        genes_selected: genes.clone(),
    });
    SnapshotDataset::new(genes, snaps, prov)
}
