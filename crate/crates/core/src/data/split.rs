use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dataset::{Snapshot, SnapshotDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    None,
    Interpolation,
    Extrapolation,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Interp,
    Extrap,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Interp => "interp",
            Task::Extrap => "extrap",
        }
    }
}

/// Held-out times. A split file needs only `interp` and `extrap`; the remaining fields
/// are filled in by [`split_holdout`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    #[serde(default)]
    pub interp: Vec<f64>,
    #[serde(default)]
    pub extrap: Vec<f64>,
    #[serde(default)]
    pub train_times: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: SplitMode,
    /// Ground-truth snapshots of the held-out times, in `interp` then `extrap` order.
    #[serde(skip)]
    pub truth: Vec<(Task, Snapshot)>,
}

fn default_mode() -> SplitMode {
    SplitMode::None
}

impl HoldoutSplit {
    pub fn new(interp: Vec<f64>, extrap: Vec<f64>) -> Self {
        HoldoutSplit {
            interp,
            extrap,
            train_times: Vec::new(),
            mode: SplitMode::None,
            truth: Vec::new(),
        }
    }

    pub fn holdouts(&self) -> impl Iterator<Item = (Task, f64)> + '_ {
        self.interp
            .iter()
            .map(|&t| (Task::Interp, t))
            .chain(self.extrap.iter().map(|&t| (Task::Extrap, t)))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Removes the held-out timepoints from `ds`, checking that every interpolation time is
/// bracketed by training times and every extrapolation time lies after all of them.
pub fn split_holdout(ds: &SnapshotDataset, interp: &[f64], extrap: &[f64]) -> Result<(SnapshotDataset, HoldoutSplit)> {
    let mut held = Vec::new();
    let mut truth = Vec::new();
    for (task, times) in [(Task::Interp, interp), (Task::Extrap, extrap)] {
        for &t in times {
            let idx = ds
                .index_of(t)
                .ok_or_else(|| Error::Dataset(format!("holdout time {t} is not in the dataset")))?;
            if held.contains(&idx) {
                return Err(Error::Dataset(format!("holdout time {t} requested twice")));
            }
            held.push(idx);
            truth.push((task, ds.snapshots()[idx].clone()));
        }
    }
    let keep: Vec<usize> = (0..ds.len()).filter(|i| !held.contains(i)).collect();
    if keep.len() < 2 {
        return Err(Error::Dataset(format!(
            "training set would keep {} timepoint(s), need at least 2",
            keep.len()
        )));
    }
    let train_times: Vec<f64> = keep.iter().map(|&i| ds.snapshots()[i].time).collect();
    let (lo, hi) = (train_times[0], train_times[train_times.len() - 1]);
    for &t in interp {
        if !(lo < t && t < hi) {
            return Err(Error::Dataset(format!(
                "interpolation holdout {t} is not inside the training range [{lo}, {hi}]"
            )));
        }
    }
    for &t in extrap {
        if t <= hi {
            return Err(Error::Dataset(format!(
                "extrapolation holdout {t} does not exceed the last training time {hi}"
            )));
        }
    }
    let mode = match (interp.is_empty(), extrap.is_empty()) {
        (true, true) => SplitMode::None,
        (false, true) => SplitMode::Interpolation,
        (true, false) => SplitMode::Extrapolation,
        (false, false) => SplitMode::Mixed,
    };
    let train = ds.subset(&keep)?;
    let split = HoldoutSplit {
        interp: interp.to_vec(),
        extrap: extrap.to_vec(),
        train_times,
        mode,
        truth,
    };
    Ok((train, split))
}
