use dunet::data::{generate, Family, SyntheticSpec};
use dunet::geometry::PointCloud;
use dunet::model::{build_model, Batch, ModelConfig, Task};
use dunet::train::{
    fit, load_checkpoint, save_checkpoint, targets, train_step, Checkpoint, OptimizerSettings, OptimizerState,
    TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_config(task: Task) -> ModelConfig {
    ModelConfig {
        task,
        lift_width: 8,
        widths: vec![8, 8, 8, 8],
        ratios: vec![0.5; 4],
        k: 6,
        head_widths: vec![8],
        seg_head_width: 8,
        num_classes: 3,
        num_parts: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn clouds(family: Family, points: usize, per_class: usize, seed: u64) -> Vec<PointCloud> {
    generate(&SyntheticSpec {
        family,
        points,
        per_class,
        noise: 0.01,
        seed,
    })
    .unwrap()
}

fn batch_loss(model: &dunet::model::Model, batch: &Batch, targets: &[usize]) -> f64 {
    // train-mode loss on a frozen batch; the clone keeps running stats untouched
    let mut probe = model.clone();
    let mut state = OptimizerState::default();
    train_step(&mut probe, batch, targets, (&mut state, &OptimizerSettings::sgd(0.0)), 0.0, ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .loss
}

#[test]
fn one_small_step_reduces_the_loss() {
    for (task, family) in [(Task::Segmentation, Family::SegComposites), (Task::Classification, Family::ClsPrimitives)] {
        let data = clouds(family, 64, 1, 2);
        let refs: Vec<&PointCloud> = data.iter().collect();
        let cfg = toy_config(task);
        let cfg = ModelConfig {
            num_classes: 3.max(refs.iter().map(|c| c.labels.as_ref().unwrap()[0] + 1).max().unwrap()),
            ..cfg
        };
        let mut model = build_model(&cfg, 3).unwrap();
        let batch = Batch::new(&refs, &cfg).unwrap();
        let y = targets(&refs, task).unwrap();
        let before = batch_loss(&model, &batch, &y);
        let mut state = OptimizerState::default();
        let settings = OptimizerSettings::sgd(0.0);
        train_step(&mut model, &batch, &y, (&mut state, &settings), 1e-4, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let after = batch_loss(&model, &batch, &y);
        assert!(after < before, "{task:?}: loss went from {before} to {after}");
    }
}

#[test]
fn checkpoint_reproduces_eval_logits_bit_for_bit() {
    let data = clouds(Family::SegComposites, 96, 4, 5);
    let cfg = toy_config(Task::Segmentation);
    let mut model = build_model(&cfg, 4).unwrap();
    let train = TrainConfig {
        epochs: 2,
        batch_size: 2,
        seed: 1,
        ..TrainConfig::segmentation()
    };
    let report = fit(&mut model, &data, &[], &train).unwrap();
    let refs: Vec<&PointCloud> = data.iter().collect();
    let batch = Batch::new(&refs, &cfg).unwrap();
    let expected = model.predict(&batch).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ckpt = Checkpoint {
        model,
        train: Some(train),
        optimizer: Some(report.optimizer),
        epoch: report.epochs as u64,
    };
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let got = loaded.model.predict(&batch).unwrap();
    assert_eq!(got.data().len(), expected.data().len());
    assert!(got.data().iter().zip(expected.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(loaded.optimizer, ckpt.optimizer);
    assert_eq!(loaded.train, ckpt.train);
    assert_eq!(loaded.epoch, 2);
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let cfg = toy_config(Task::Classification);
    let ckpt = Checkpoint {
        model: build_model(&cfg, 1).unwrap(),
        train: None,
        optimizer: None,
        epoch: 0,
    };
    let bytes = dunet::train::encode(&ckpt);
    for cut in [0, 4, bytes.len() / 2, bytes.len() - 1] {
        assert!(dunet::train::decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    assert_eq!(dunet::train::decode(&bytes).unwrap().model.store.len(), ckpt.model.store.len());
}
