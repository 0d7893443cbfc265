use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::synth::SyntheticSpec;

/// Cells observed at one physical time; rows are cells, columns genes.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub cells: Tensor,
}

/// How the expression values were produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub log_normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub target_library_size: f64,
    pub transform: String,
    pub hvg_rule: String,
    pub hvg_requested: usize,
    pub genes_in: usize,
    pub genes_selected: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDataset {
    genes: Vec<String>,
    snapshots: Vec<Snapshot>,
    pub provenance: Provenance,
}

const TIME_MATCH_TOL: f64 = 1e-9;

impl SnapshotDataset {
    /// Validates and sorts `snapshots` by time.
    pub fn new(genes: Vec<String>, mut snapshots: Vec<Snapshot>, provenance: Provenance) -> Result<Self> {
        if genes.is_empty() {
            return Err(Error::Dataset("no genes".into()));
        }
        if snapshots.is_empty() {
            return Err(Error::Dataset("no timepoints".into()));
        }
        snapshots.sort_by(|a, b| a.time.total_cmp(&b.time));
        for s in &snapshots {
            if !s.time.is_finite() {
                return Err(Error::Dataset(format!("non-finite time {}", s.time)));
            }
            if s.cells.cols() != genes.len() {
                return Err(Error::Dataset(format!(
                    "timepoint {} has {} genes, expected {}",
                    s.time,
                    s.cells.cols(),
                    genes.len()
                )));
            }
            if s.cells.rows() == 0 {
                return Err(Error::Dataset(format!("timepoint {} has no cells", s.time)));
            }
            if !s.cells.is_finite() {
                return Err(Error::Dataset(format!("timepoint {} has non-finite values", s.time)));
            }
            if provenance.log_normalized && s.cells.data().iter().any(|v| *v < 0.0) {
                return Err(Error::Dataset(format!(
                    "timepoint {} has negative values in log-normalized data",
                    s.time
                )));
            }
        }
        if snapshots.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::Dataset("timepoints must be strictly increasing".into()));
        }
        Ok(SnapshotDataset {
            genes,
            snapshots,
            provenance,
        })
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn num_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.cells.rows()).collect()
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.snapshots.iter().position(|s| (s.time - t).abs() <= TIME_MATCH_TOL)
    }

    pub fn at(&self, t: f64) -> Option<&Snapshot> {
        self.index_of(t).map(|i| &self.snapshots[i])
    }

    /// All cells stacked in time order.
    pub fn all_cells(&self) -> Tensor {
        let parts: Vec<&Tensor> = self.snapshots.iter().map(|s| &s.cells).collect();
        Tensor::vstack(&parts).expect("validated widths")
    }

    /// Subset keeping the timepoints at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let snaps = indices.iter().map(|&i| self.snapshots[i].clone()).collect();
        Self::new(self.genes.clone(), snaps, self.provenance.clone())
    }

    /// Parses `time,<gene>,…` rows. Cells sharing a time are grouped in file order.
    pub fn read_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(r) => r?,
            None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
        };
        if header.get(0) != Some("time") {
            return Err(Error::Parse {
                line: 1,
                msg: "header must start with `time`".into(),
            });
        }
        let genes: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        if genes.is_empty() || genes.iter().any(String::is_empty) {
            return Err(Error::Parse {
                line: 1,
                msg: "header must name at least one gene and no empty columns".into(),
            });
        }
        let width = genes.len() + 1;
        let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
        for rec in records {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() == 1 && rec.get(0) == Some("") {
                continue;
            }
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            let mut vals = Vec::with_capacity(width);
            for (col, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("column {} is not a number: `{field}`", col + 1),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("column {} is not finite", col + 1),
                    });
                }
                vals.push(v);
            }
            let t = vals[0];
            match groups.iter_mut().find(|(gt, _)| *gt == t) {
                Some((_, cells)) => cells.extend_from_slice(&vals[1..]),
                None => groups.push((t, vals[1..].to_vec())),
            }
        }
        let g = genes.len();
        let snaps = groups
            .into_iter()
            .map(|(time, data)| {
                let rows = data.len() / g;
                Ok(Snapshot {
                    time,
                    cells: Tensor::new(rows, g, data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(genes, snaps, Provenance::default())
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.genes.iter().cloned());
        w.write_record(&header)?;
        for s in &self.snapshots {
            for row in s.cells.iter_rows() {
                let mut rec = Vec::with_capacity(row.len() + 1);
                rec.push(s.time.to_string());
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Loads a CSV and, when present, its provenance sidecar.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ds = Self::read_csv(std::io::BufReader::new(file))?;
        let side = provenance_path(path);
        if side.exists() {
            let s = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let prov: Provenance = serde_json::from_str(&s)?;
            ds = Self::new(ds.genes, ds.snapshots, prov)?;
        } else {
            ds.provenance.source = path.display().to_string();
        }
        Ok(ds)
    }

    /// Writes the CSV and a `<stem>.provenance.json` sidecar next to it.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_csv(&mut buf)?;
        buf.flush().map_err(|e| Error::io(path, e))?;
        let side = provenance_path(path);
        let json = serde_json::to_string_pretty(&self.provenance)?;
        fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }
}

pub fn provenance_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("provenance.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "time,gene_1,gene_2\n0,1,2\n1,3,4\n0,5,6\n1,7,8\n1,9,10\n";

    #[test]
    fn groups_by_time() {
        let ds = SnapshotDataset::read_csv(SMALL.as_bytes()).unwrap();
        assert_eq!(ds.times(), vec![0.0, 1.0]);
        assert_eq!(ds.cell_counts(), vec![2, 3]);
        assert_eq!(ds.snapshots()[0].cells.row(1), &[5.0, 6.0]);
    }

    #[test]
    fn shuffled_rows_give_same_groups() {
        let shuffled = "time,gene_1,gene_2\n1,3,4\n0,1,2\n1,7,8\n0,5,6\n1,9,10\n";
        let a = SnapshotDataset::read_csv(SMALL.as_bytes()).unwrap();
        let b = SnapshotDataset::read_csv(shuffled.as_bytes()).unwrap();
        assert_eq!(a.times(), b.times());
        assert_eq!(a.cell_counts(), b.cell_counts());
        let sorted = |s: &Snapshot| {
            let mut rows: Vec<Vec<f64>> = s.cells.iter_rows().map(<[f64]>::to_vec).collect();
            rows.sort_by(|x, y| x.partial_cmp(y).unwrap());
            rows
        };
        for (x, y) in a.snapshots().iter().zip(b.snapshots()) {
            assert_eq!(sorted(x), sorted(y));
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("t,gene_1\n0,1\n", 1),
            ("time,gene_1,gene_2\n0,1,2\n0,1\n", 3),
            ("time,gene_1\n0,1\n1,abc\n", 3),
        ];
        for (text, want) in cases {
            match SnapshotDataset::read_csv(text.as_bytes()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let mut ds = SnapshotDataset::read_csv(SMALL.as_bytes()).unwrap();
        ds.provenance.source = "unit".into();
        ds.save_csv(&path).unwrap();
        assert!(provenance_path(&path).exists());
        let back = SnapshotDataset::load_csv(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_inconsistent_snapshots() {
        let g = vec!["a".to_string()];
        let bad = vec![Snapshot {
            time: 0.0,
            cells: Tensor::zeros(0, 1),
        }];
        assert!(SnapshotDataset::new(g.clone(), bad, Provenance::default()).is_err());
        let dup = vec![
            Snapshot {
                time: 1.0,
                cells: Tensor::zeros(1, 1),
            },
            Snapshot {
                time: 1.0,
                cells: Tensor::zeros(1, 1),
            },
        ];
        assert!(SnapshotDataset::new(g, dup, Provenance::default()).is_err());
    }
}
