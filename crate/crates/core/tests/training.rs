use ddl_core::config::{HyperParams, ModelConfig, TrainConfig};
use ddl_core::data::{generate_synthetic, Label, SynthSpec};
use ddl_core::math::Matrix;
use ddl_core::trainer::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, TrainSet, Trainer,
};

fn small_hyper() -> HyperParams {
    HyperParams {
        model: ModelConfig {
            dim: 32,
            heads: 2,
            hidden: 8,
            mlp_hidden: 16,
            mlp_out: 8,
            kernel: 3,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            batch_size: 4,
            epochs: 4,
            t_max: 24,
            ..TrainConfig::default()
        },
        ..HyperParams::default()
    }
}

fn small_set() -> TrainSet {
    let ds = generate_synthetic(&SynthSpec {
        normal_videos: 6,
        anomaly_videos: 6,
        test_normal_videos: 1,
        test_anomaly_videos: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    TrainSet::new(&ds.train.bags, 24).unwrap()
}

fn probe_batch(set: &TrainSet) -> Vec<(&Matrix, Label)> {
    vec![
        (&set.positives[0], Label::Abnormal),
        (&set.positives[1], Label::Abnormal),
        (&set.negatives[0], Label::Normal),
        (&set.negatives[1], Label::Normal),
    ]
}

#[test]
fn reloaded_checkpoint_gives_identical_next_step_loss() {
    let set = small_set();
    let mut trainer = Trainer::new(small_hyper()).unwrap();
    trainer.train_epoch(&set).unwrap();
    trainer.train_epoch(&set).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ddlc");
    write_checkpoint(&trainer.checkpoint(), &path).unwrap();
    let mut restored = Trainer::from_checkpoint(read_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(restored.checkpoint(), trainer.checkpoint());

    let batch = probe_batch(&set);
    let a = trainer.step(&batch, 1e-4).unwrap();
    let b = restored.step(&batch, 1e-4).unwrap();
    assert_eq!(a.total.to_bits(), b.total.to_bits());
    assert_eq!(trainer.params, restored.params);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let set = small_set();
    let mut straight = Trainer::new(small_hyper()).unwrap();
    let full = straight.fit(&set, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(small_hyper()).unwrap();
    first.train_epoch(&set).unwrap();
    first.train_epoch(&set).unwrap();
    let bytes = encode_checkpoint(&first.checkpoint()).unwrap();
    let mut resumed = Trainer::from_checkpoint(decode_checkpoint(&bytes).unwrap()).unwrap();
    let tail = resumed.fit(&set, |_, _| Ok(())).unwrap();

    assert_eq!(tail.len(), 2);
    assert_eq!(&full[2..], &tail[..]);
    assert_eq!(straight.params, resumed.params);
}

#[test]
fn accepted_steps_keep_parameters_finite() {
    let set = small_set();
    let mut trainer = Trainer::new(small_hyper()).unwrap();
    let trace = trainer.fit(&set, |_, _| Ok(())).unwrap();
    assert!(trace.windows(2).all(|w| w[1].lr <= w[0].lr));
    for (name, m) in trainer.params.named() {
        assert!(m.is_finite(), "{name} is not finite");
    }
}
