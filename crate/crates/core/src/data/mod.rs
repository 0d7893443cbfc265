//! Snapshot datasets: CSV ingestion, preprocessing, holdout splits and synthetic
//! generators.

mod dataset;
mod preprocess;
mod split;
mod synth;

pub use dataset::{provenance_path, Normalization, Provenance, Snapshot, SnapshotDataset};
pub use preprocess::preprocess;
pub use split::{split_holdout, HoldoutSplit, SplitMode, Task};
pub use synth::{synth_generate, SynthKind, SyntheticSpec};
