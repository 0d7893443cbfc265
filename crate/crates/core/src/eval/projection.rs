use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::Snapshot;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::predict::PredictionSet;

/// Two-component PCA fitted on a reference cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// `2 × G`, rows are unit principal axes.
    pub components: Tensor,
    /// Variance along each axis, largest first.
    pub explained_variance: [f64; 2],
}

impl Pca2 {
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, g) = x.shape();
        if n < 2 || g < 2 {
            return Err(Error::invalid("pca", format!("need at least 2 cells and 2 genes, got {n}×{g}")));
        }
        let mean = x.mean_rows();
        let centered = DMatrix::from_fn(n, g, |r, c| x.get(r, c) - mean[c]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]];
        if !(top[1] > 1e-12 * top[0].max(1e-300)) {
            return Err(Error::invalid("pca", "data has fewer than 2 effective dimensions"));
        }
        let mut components = Tensor::zeros(2, g);
        for (k, &col) in order[..2].iter().enumerate() {
            let v = eig.eigenvectors.column(col);
            // fix the sign so the largest-magnitude loading is positive
            let pivot = (0..g).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for c in 0..g {
                components.set(k, c, sign * v[c]);
            }
        }
        Ok(Pca2 {
            mean,
            components,
            explained_variance: top,
        })
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "pca_transform",
                left: x.shape(),
                right: (x.rows(), self.mean.len()),
            });
        }
        let centered = Tensor::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) - self.mean[c]);
        centered.matmul(&self.components.transpose())
    }
}

/// Fits a 2-D PCA on all true cells, projects true and predicted cells, and writes
/// `x,y,time,source` rows with `source ∈ {true, pred}`.
pub fn emit_projection(truth: &[Snapshot], predictions: &[PredictionSet], path: &Path) -> Result<Pca2> {
    let parts: Vec<&Tensor> = truth.iter().map(|s| &s.cells).collect();
    if parts.is_empty() {
        return Err(Error::invalid("emit_projection", "no true cells"));
    }
    let pca = Pca2::fit(&Tensor::vstack(&parts)?)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["x", "y", "time", "source"])?;
    let sets = truth
        .iter()
        .map(|s| (s.time, &s.cells, "true"))
        .chain(predictions.iter().map(|p| (p.time, &p.cells, "pred")));
    for (time, cells, source) in sets {
        let xy = pca.transform(cells)?;
        for r in xy.iter_rows() {
            w.write_record([r[0].to_string(), r[1].to_string(), time.to_string(), source.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Method;
    use crate::eval::PredictionProvenance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn isotropic_variance_splits_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4000;
        let x = Tensor::from_fn(n, 3, |_, _| StandardNormal.sample(&mut rng));
        let pca = Pca2::fit(&x).unwrap();
        // the sample eigenvalues of an identity covariance stay within a few n^(-1/2)
        for v in pca.explained_variance {
            assert!((v - 1.0).abs() < 6.0 / (n as f64).sqrt(), "{v}");
        }
        let gram = pca.components.matmul(&pca.components.transpose()).unwrap();
        assert!((gram.get(0, 1)).abs() < 1e-12 && (gram.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_dominant_axis() {
        let x = Tensor::from_fn(50, 3, |r, c| match c {
            0 => r as f64,
            1 => (r % 5) as f64 * 0.1,
            _ => 0.0,
        });
        let pca = Pca2::fit(&x).unwrap();
        assert!((pca.components.get(0, 0) - 1.0).abs() < 1e-3, "{:?}", pca.components);
    }

    #[test]
    fn degenerate_data_is_rejected() {
        let line = Tensor::from_fn(10, 3, |r, _| r as f64);
        assert!(Pca2::fit(&line).is_err());
    }

    #[test]
    fn identical_sets_share_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proj.csv");
        let cells = Tensor::from_fn(6, 3, |r, c| ((r * 7 + c * 3) % 5) as f64);
        let truth = vec![Snapshot { time: 2.0, cells: cells.clone() }];
        let pred = vec![PredictionSet {
            time: 2.0,
            cells,
            provenance: PredictionProvenance {
                checkpoint: None,
                method: Method::Rk4,
                step: 0.1,
                seed: 0,
                source_time: 0.0,
            },
        }];
        emit_projection(&truth, &pred, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(lines.len(), 12);
        for i in 0..6 {
            assert_eq!(lines[i].replace(",true", ""), lines[i + 6].replace(",pred", ""));
        }
    }
}
