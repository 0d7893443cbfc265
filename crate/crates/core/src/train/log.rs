use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// VAE pretraining.
    Vae,
    /// Joint training with the Euclidean latent coupling cost.
    Warmup,
    /// Joint training with the fused bidirectional coupling cost.
    Fused,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Vae => "vae",
            Phase::Warmup => "warmup",
            Phase::Fused => "fused",
        }
    }
}

/// One optimizer step. Terms that were not computed on the step are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    pub l_vae: f64,
    pub l_fm: Option<f64>,
    pub l_ot: Option<f64>,
    pub l_dyn: Option<f64>,
    pub total: f64,
    pub retained_mass: Option<f64>,
    /// Wall time since training started; only filled when timing is requested.
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

pub const LOG_COLUMNS: [&str; 9] = [
    "step",
    "phase",
    "l_vae",
    "l_fm",
    "l_ot",
    "l_dyn",
    "total",
    "retained_mass",
    "seconds",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of the given phase.
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut out = String::new();
        out.push_str(&LOG_COLUMNS.join(","));
        out.push('\n');
        for r in &self.records {
            let fields = [
                r.step.to_string(),
                r.phase.as_str().to_string(),
                r.l_vae.to_string(),
                opt(r.l_fm),
                opt(r.l_ot),
                opt(r.l_dyn),
                r.total.to_string(),
                opt(r.retained_mass),
                opt(r.seconds),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        w.write_all(out.as_bytes()).map_err(|e| Error::io(Path::new("<train log>"), e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_terms_are_blank() {
        let mut log = TrainLog::default();
        log.push(StepRecord {
            step: 3,
            phase: Phase::Warmup,
            l_vae: 1.5,
            l_fm: Some(0.25),
            l_ot: None,
            l_dyn: None,
            total: 1.75,
            retained_mass: Some(0.9),
            seconds: None,
        });
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,phase,l_vae,l_fm,l_ot,l_dyn,total,retained_mass,seconds\n3,warmup,1.5,0.25,,,1.75,0.9,\n"
        );
    }
}
