use snapflow::data::{split_holdout, synth_generate, SnapshotDataset, SynthKind, SyntheticSpec};
use snapflow::eval::{evaluate, predict, EvalOptions};
use snapflow::train::{fit, TrainConfig};
use snapflow::ModelBundle;

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.max_steps = 12;
    cfg.e_warm = 5;
    cfg.k_ot = 4;
    cfg.batch_size = 16;
    cfg.vae_epochs = 3;
    cfg.model.latent = 3;
    cfg.model.vae_hidden = 8;
    cfg.model.field_hidden = 8;
    cfg.model.time_dim = 4;
    cfg
}

fn dataset() -> SnapshotDataset {
    let mut spec = SyntheticSpec::new(SynthKind::Rotation, 2, 6, 40, 0.2, 17);
    spec.genes = Some(5);
    spec.gene_noise = 0.05;
    synth_generate(&spec).unwrap()
}

#[test]
fn csv_dataset_trains_and_reloaded_checkpoint_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    dataset().save_csv(&csv).unwrap();
    let ds = SnapshotDataset::load_csv(&csv).unwrap();
    assert_eq!(ds.provenance.synthetic, dataset().provenance.synthetic);

    let (train, split) = split_holdout(&ds, &[2.0], &[5.0]).unwrap();
    let out = fit(&train, &tiny_config()).unwrap();
    assert_eq!(out.summary.steps, 12);
    assert_eq!(out.summary.rollouts, 3);
    assert!(out.log.records.iter().all(|r| r.total.is_finite() && r.total >= 0.0));

    let path = dir.path().join("model.json");
    out.model.save(&path).unwrap();
    let loaded = ModelBundle::load(&path).unwrap();
    let a = predict(&out.model, &train, &[1.5, 5.0], 9, 4).unwrap();
    let b = predict(&loaded, &train, &[1.5, 5.0], 9, 4).unwrap();
    assert_eq!(a, b);

    let opts = EvalOptions::default();
    let r1 = evaluate(&loaded, &train, &split, &opts).unwrap();
    let r2 = evaluate(&loaded, &train, &split, &opts).unwrap();
    assert_eq!(r1.to_json().unwrap(), r2.to_json().unwrap());
    assert_eq!(r1.rows.len(), 2);
    assert!(r1.rows.iter().all(|r| r.wasserstein.is_finite() && r.l2 > 0.0));
}
