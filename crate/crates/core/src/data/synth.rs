//! Seeded synthetic snapshot generators with known generative parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::dataset::{Provenance, Snapshot, SnapshotDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    DriftGaussian,
    Bifurcation,
    Rotation,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn half() -> f64 {
    0.5
}

/// Generator settings. Times are `0, dt, 2dt, …`.
///
/// * drift-gaussian: `N(c·t·1, σ²I)`.
/// * bifurcation: axis 0 drifts as `c·t`; after `split_time` half the cells move along
///   axis 1 at `+branch_speed` and half at `−branch_speed`.
/// * rotation: `N(r(cos ωt, sin ωt, 0, …), σ²I)`.
///
/// With `genes` set, points are mapped to gene space by a fixed matrix with orthonormal
/// rows and `gene_noise` is added per gene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SynthKind,
    pub dim: usize,
    pub timepoints: usize,
    pub cells: usize,
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub genes: Option<usize>,
    #[serde(default)]
    pub gene_noise: f64,
    #[serde(default = "one")]
    pub dt: f64,
    #[serde(default = "one")]
    pub drift: f64,
    #[serde(default)]
    pub split_time: f64,
    #[serde(default = "one")]
    pub branch_speed: f64,
    #[serde(default = "half")]
    pub omega: f64,
    #[serde(default = "two")]
    pub radius: f64,
}

impl SyntheticSpec {
    pub fn new(kind: SynthKind, dim: usize, timepoints: usize, cells: usize, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            kind,
            dim,
            timepoints,
            cells,
            noise,
            seed,
            genes: None,
            gene_noise: 0.0,
            dt: 1.0,
            drift: 1.0,
            split_time: 0.0,
            branch_speed: 1.0,
            omega: 0.5,
            radius: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("synth_generate", m));
        if self.dim == 0 || self.timepoints == 0 || self.cells == 0 {
            return bad("dim, timepoints and cells must be positive".into());
        }
        if !(self.noise >= 0.0 && self.gene_noise >= 0.0 && self.dt > 0.0) {
            return bad("noise must be nonnegative and dt positive".into());
        }
        let finite = [self.noise, self.gene_noise, self.dt, self.drift, self.split_time, self.branch_speed, self.omega, self.radius];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if matches!(self.kind, SynthKind::Bifurcation | SynthKind::Rotation) && self.dim < 2 {
            return bad(format!("{:?} needs dim ≥ 2", self.kind));
        }
        if let Some(g) = self.genes {
            if g < self.dim {
                return bad(format!("genes ({g}) must be at least dim ({})", self.dim));
            }
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.timepoints).map(|k| k as f64 * self.dt).collect()
    }

    pub fn num_genes(&self) -> usize {
        self.genes.unwrap_or(self.dim)
    }

    /// Mean of the ambient distribution at `t` (the mixture mean for bifurcation).
    pub fn mean(&self, t: f64) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        match self.kind {
            SynthKind::DriftGaussian => m.iter_mut().for_each(|v| *v = self.drift * t),
            SynthKind::Bifurcation => m[0] = self.drift * t,
            SynthKind::Rotation => {
                m[0] = self.radius * (self.omega * t).cos();
                m[1] = self.radius * (self.omega * t).sin();
            }
        }
        m
    }

    /// Offset of the two branches along axis 1 at `t`; zero before the split.
    pub fn branch_offset(&self, t: f64) -> f64 {
        self.branch_speed * (t - self.split_time).max(0.0)
    }

    /// `dim × genes` map with orthonormal rows, or `None` without lifting.
    pub fn lift(&self) -> Option<Tensor> {
        let g = self.genes?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(self.dim);
        while rows.len() < self.dim {
            let mut v: Vec<f64> = (0..g).map(|_| StandardNormal.sample(&mut rng)).collect();
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                rows.push(v);
            }
        }
        Some(Tensor::from_rows(&rows).expect("equal widths"))
    }

    /// Maps ambient points to gene space without noise.
    pub fn to_genes(&self, ambient: &Tensor) -> Tensor {
        match self.lift() {
            Some(l) => ambient.matmul(&l).expect("dim matches"),
            None => ambient.clone(),
        }
    }

    fn sample_ambient(&self, t: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let mean = self.mean(t);
        let offset = self.branch_offset(t);
        let mut x = Tensor::zeros(self.cells, self.dim);
        for r in 0..self.cells {
            let sign = if self.kind == SynthKind::Bifurcation && rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            };
            for c in 0..self.dim {
                let z: f64 = StandardNormal.sample(rng);
                let mut v = mean[c] + self.noise * z;
                if self.kind == SynthKind::Bifurcation && c == 1 {
                    v += sign * offset;
                }
                x.set(r, c, v);
            }
        }
        x
    }
}

/// Draws a dataset from `spec`; the spec is kept in the provenance.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SnapshotDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let g = spec.num_genes();
    let snaps = spec
        .times()
        .into_iter()
        .map(|t| {
            let mut cells = spec.to_genes(&spec.sample_ambient(t, &mut rng));
            if spec.genes.is_some() && spec.gene_noise > 0.0 {
                for v in cells.data_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += spec.gene_noise * z;
                }
            }
            Snapshot { time: t, cells }
        })
        .collect();
    let genes = (1..=g).map(|i| format!("gene_{i}")).collect();
    let prov = Provenance {
        source: format!("synthetic:{}", serde_json::to_string(&spec.kind)?.trim_matches('"')),
        log_normalized: false,
        normalization: None,
        synthetic: Some(spec.clone()),
    };
    SnapshotDataset::new(genes, snaps, prov)
}
