use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use snapflow::data::{split_holdout, synth_generate, HoldoutSplit, Provenance, SnapshotDataset, SyntheticSpec};
use snapflow::eval::{emit_projection, evaluate, predict, EvalOptions, MetricReport};
use snapflow::train::{FitSummary, TrainConfig, Trainer};
use snapflow::{Error, ModelBundle, Result};

#[derive(Parser)]
#[command(name = "snapflow", version, about = "Generative dynamics for snapshot time series of cell populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON spec.
    Synth(SynthArgs),
    /// Fit a model to a dataset.
    Train(TrainArgs),
    /// Score a model on held-out timepoints against the naive baseline.
    Evaluate(EvaluateArgs),
    /// Generate cells at arbitrary times.
    Predict(PredictArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (JSON); every key is required.
    #[arg(long)]
    config: PathBuf,
    /// Dataset CSV: `time,gene_1,…,gene_G` per cell.
    #[arg(long)]
    data: PathBuf,
    /// Holdout split (JSON); held-out times are removed before training.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the VAE fixed after pretraining.
    #[arg(long)]
    freeze_vae: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Full dataset including the held-out times.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset whose earliest snapshot seeds the rollouts.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated query times.
    #[arg(long, value_delimiter = ',', required = true)]
    times: Vec<f64>,
    /// Cells per query time.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a 2-D PCA projection of observed and predicted cells.
    #[arg(long)]
    emit_projection: bool,
}

#[derive(Serialize)]
struct Versions {
    snapflow: &'static str,
    checkpoint_format: u32,
}

/// Everything needed to rerun a command and get the same outputs.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a TrainConfig>,
    data: Option<&'a Path>,
    provenance: Option<&'a Provenance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<&'a HoldoutSplit>,
    checkpoints: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a FitSummary>,
    versions: Versions,
    wall_clock_seconds: f64,
}

impl<'a> RunManifest<'a> {
    fn new(command: &'a str, seed: u64) -> Self {
        RunManifest {
            command,
            args: std::env::args().collect(),
            config: None,
            data: None,
            provenance: None,
            split: None,
            checkpoints: Vec::new(),
            outputs: Vec::new(),
            seed,
            summary: None,
            versions: Versions {
                snapflow: env!("CARGO_PKG_VERSION"),
                checkpoint_format: snapflow::tensor::FORMAT_VERSION,
            },
            wall_clock_seconds: 0.0,
        }
    }

    /// Writes through a temporary file and a rename so readers never see a partial manifest.
    fn write(&mut self, dir: &Path, started: Instant) -> Result<()> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let path = dir.join("manifest.json");
        let tmp = dir.join(".manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::Io {
            path: tmp.clone(),
            source: e,
        })?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::Io { path, source: e })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn load_split(path: &Path) -> Result<HoldoutSplit> {
    HoldoutSplit::from_json(&read(path)?)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = serde_json::from_str(&read(&a.config)?)
        .map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let ds = synth_generate(&spec)?;
    create_dir(&a.out)?;
    let path = a.out.join("data.csv");
    ds.save_csv(&path)?;
    println!("wrote {} ({} timepoints, {} cells)", path.display(), ds.len(), ds.cell_counts().iter().sum::<usize>());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut config = TrainConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if a.freeze_vae {
        config.freeze_vae = true;
    }
    let full = SnapshotDataset::load_csv(&a.data)?;
    let (train, split) = match &a.split {
        Some(p) => {
            let s = load_split(p)?;
            let (train, split) = split_holdout(&full, &s.interp, &s.extrap)?;
            (train, Some(split))
        }
        None => (full, None),
    };
    create_dir(&a.out)?;
    let ckpt_dir = a.out.join("checkpoints");
    let mut checkpoints = Vec::new();
    let mut trainer = Trainer::new(&train, config.clone())?;
    trainer.pretrain()?;
    trainer.train(|step, model| {
        create_dir(&ckpt_dir)?;
        let p = ckpt_dir.join(format!("step_{step}.json"));
        model.save(&p)?;
        checkpoints.push(p);
        Ok(())
    })?;
    let out = trainer.finish();
    let model_path = a.out.join("model.json");
    out.model.save(&model_path)?;
    checkpoints.push(model_path.clone());
    let log_path = a.out.join("train_log.csv");
    out.log.save_csv(&log_path)?;

    let mut m = RunManifest::new("train", config.seed);
    m.config = Some(&config);
    m.data = Some(&a.data);
    m.provenance = Some(&train.provenance);
    m.split = split.as_ref();
    m.checkpoints = checkpoints;
    m.outputs = vec![log_path];
    m.summary = Some(&out.summary);
    m.write(&a.out, started)?;
    println!(
        "trained {} steps (converged: {}), model at {}",
        out.summary.steps,
        out.summary.converged,
        model_path.display()
    );
    Ok(())
}

fn check_genes(model: &ModelBundle, data: &SnapshotDataset) -> Result<()> {
    if model.meta.genes != data.genes() {
        return Err(Error::Dataset(format!(
            "checkpoint has {} genes, dataset has {}; gene lists must match",
            model.genes(),
            data.num_genes()
        )));
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let model = ModelBundle::load(&a.checkpoint)?;
    let full = SnapshotDataset::load_csv(&a.data)?;
    check_genes(&model, &full)?;
    let s = load_split(&a.split)?;
    let (train, split) = split_holdout(&full, &s.interp, &s.extrap)?;
    let report: MetricReport = evaluate(
        &model,
        &train,
        &split,
        &EvalOptions {
            seed: a.seed,
            ..Default::default()
        },
    )?;
    create_dir(&a.out)?;
    let csv_path = a.out.join("report.csv");
    let file = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    report.write_csv(file)?;
    let json_path = a.out.join("report.json");
    std::fs::write(&json_path, report.to_json()?).map_err(io_err(&json_path))?;

    let mut m = RunManifest::new("evaluate", a.seed);
    m.data = Some(&a.data);
    m.provenance = Some(&full.provenance);
    m.split = Some(&split);
    m.checkpoints = vec![a.checkpoint.clone()];
    m.outputs = vec![csv_path.clone(), json_path];
    m.write(&a.out, started)?;
    for s in &report.summary {
        println!(
            "{}: wasserstein {:.4} (naive {:.4}), l2 {:.4} (naive {:.4})",
            s.task.as_str(),
            s.wasserstein,
            s.naive_wasserstein,
            s.l2,
            s.naive_l2
        );
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let started = Instant::now();
    let model = ModelBundle::load(&a.checkpoint)?;
    let data = SnapshotDataset::load_csv(&a.data)?;
    check_genes(&model, &data)?;
    let mut preds = predict(&model, &data, &a.times, a.n as usize, a.seed)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    for p in &mut preds {
        p.provenance.checkpoint = Some(a.checkpoint.display().to_string());
        let path = a.out.join(format!("pred_t{}.csv", p.time));
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        p.write_csv(data.genes(), std::io::BufWriter::new(file))?;
        outputs.push(path);
    }
    if a.emit_projection {
        let path = a.out.join("projection.csv");
        emit_projection(data.snapshots(), &preds, &path)?;
        outputs.push(path);
    }
    let mut m = RunManifest::new("predict", a.seed);
    m.data = Some(&a.data);
    m.provenance = Some(&data.provenance);
    m.checkpoints = vec![a.checkpoint.clone()];
    m.outputs = outputs;
    m.write(&a.out, started)?;
    println!("wrote {} prediction file(s) to {}", preds.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    snapflow::parallel::configure_from_env();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
