use hybridpool::config::lr_at;
use hybridpool::data::synthetic_pair;
use hybridpool::train::{evaluate_checkpoint, evaluate_model, load_datasets, train};
use hybridpool::{Checkpoint, Error, MetricsLog, Model, Tensor, TrainConfig, Variant};

#[test]
fn desk_run_learns_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig::desk(Variant::HybridDiffStride, 0);
    let (train_set, val_set) = load_datasets(&config).unwrap();
    let mut seen = 0;
    let out = train::<f32>(&config, &train_set, &val_set, Some(dir.path()), &mut |log| {
        seen += 1;
        assert_eq!(log.rows.len(), seen);
    })
    .unwrap();
    let log = &out.log;
    assert_eq!(log.rows.len(), 10);
    let last = log.rows.last().unwrap();
    println!("final train_acc {:.3} val_acc {:.3}", last.train_acc, last.val_acc);
    assert!(last.train_acc > 0.8, "{}", last.train_acc);
    assert!(last.val_acc >= 0.35, "{}", last.val_acc);

    let schedule = config.schedule();
    for row in &log.rows {
        assert_eq!(row.lr, lr_at(&schedule, row.epoch));
    }
    // strides stay in [1, N) for the 16x16 and 8x8 inputs they see
    let limits = [16.0, 8.0];
    for row in &log.rows {
        for (pair, limit) in row.strides.chunks(2).zip(limits) {
            assert!(pair.iter().all(|&s| (1.0..limit).contains(&s)), "{pair:?}");
        }
    }

    let on_disk = MetricsLog::load(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(&on_disk, log);
    let best = Checkpoint::<f32>::load(&dir.path().join("best.ckpt")).unwrap();
    let (_, best_acc) = evaluate_checkpoint(&best, &val_set, 256).unwrap();
    assert_eq!(best_acc, out.best_val_acc);
    assert_eq!(log.rows[out.best_epoch].val_acc, out.best_val_acc);

    let final_ck = Checkpoint::<f32>::load(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(final_ck.metrics, log.to_csv_string());
    let mut model = out.model;
    let before = evaluate_model(&mut model, &val_set, 256).unwrap();
    assert_eq!(evaluate_checkpoint(&final_ck, &val_set, 256).unwrap(), before);
    assert_eq!((before.0, before.1), (last.val_loss, last.val_acc));
}

#[test]
fn identical_runs_write_identical_csv() {
    let mut config = TrainConfig::desk(Variant::HybridSpectral, 5);
    config.epochs = 3;
    config.augment = true;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let (tr, va) = load_datasets(&config).unwrap();
        train::<f32>(&config, &tr, &va, Some(dir.path()), &mut |_| {}).unwrap();
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "metrics.csv"), read(&b, "metrics.csv"));
    assert_eq!(read(&a, "final.ckpt"), read(&b, "final.ckpt"));

    let mut other = config.clone();
    other.seed = 6;
    let (tr, va) = load_datasets(&other).unwrap();
    let c = train::<f32>(&other, &tr, &va, None, &mut |_| {}).unwrap();
    assert_ne!(c.log.to_csv_string().into_bytes(), read(&a, "metrics.csv"));
}

#[test]
fn checkpoint_round_trip_evaluates_bit_exactly() {
    let config = TrainConfig {
        epochs: 1,
        ..TrainConfig::desk(Variant::HybridDiffStride, 2)
    };
    let dir = tempfile::tempdir().unwrap();
    let (tr, va) = load_datasets(&config).unwrap();
    let mut out = train::<f64>(&config, &tr, &va, None, &mut |_| {}).unwrap();
    let before = evaluate_model(&mut out.model, &va, 32).unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::from_model(&out.model, &config, String::new())
        .save(&path)
        .unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(evaluate_checkpoint(&back, &va, 32).unwrap(), before);
    assert_eq!(back.train_config().unwrap(), config);
    assert!(matches!(Checkpoint::<f32>::load(&path), Err(Error::Format { .. })));
}

#[test]
fn empty_log_has_comment_and_header_only() {
    let log = MetricsLog::new("seed=0", &["stem.pool".to_string()]);
    let text = log.to_csv_string();
    let lines: Vec<&str> = text.split("\r\n").filter(|l| !l.is_empty()).collect();
    assert_eq!(
        lines,
        [
            "# seed=0",
            "epoch,lr,train_loss,train_acc,val_loss,val_acc,stem.pool.s_h,stem.pool.s_w"
        ]
    );
}

#[test]
fn constant_logits_predict_the_first_class() {
    let config = TrainConfig::desk(Variant::Baseline, 0);
    let mut model = Model::<f64>::build(&config.model_config()).unwrap();
    for name in ["dense.weight", "dense.bias"] {
        let id = model.params().id(name).unwrap();
        let shape = model.params().value(id).shape().to_vec();
        model.params_mut().set_value(id, Tensor::zeros(shape)).unwrap();
    }
    let (_, val) = synthetic_pair(0, 10, 97, 10, 16).unwrap();
    let (loss, acc) = evaluate_model(&mut model, &val, 16).unwrap();
    let zeros = val.labels().iter().filter(|&&l| l == 0).count();
    assert_eq!(acc, zeros as f64 / 97.0);
    assert!((loss - 10f64.ln()).abs() < 1e-12);

    let (_, wrong) = synthetic_pair(0, 10, 12, 3, 16).unwrap();
    assert!(matches!(
        evaluate_model(&mut model, &wrong, 4),
        Err(Error::Config { .. })
    ));
}

#[test]
fn diverging_run_names_the_non_finite_tensor() {
    let config = TrainConfig {
        epochs: 2,
        lr_schedule: Some(vec![(0, 1e300)]),
        ..TrainConfig::desk(Variant::Baseline, 0)
    };
    let (tr, va) = load_datasets(&config).unwrap();
    let err = train::<f64>(&config, &tr, &va, None, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    println!("{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let mut config = TrainConfig::desk(Variant::Baseline, 0);
    config.lr_schedule = Some(vec![(0, 0.1), (0, 0.01)]);
    assert!(matches!(config.validate(), Err(Error::Config { .. })));
    config.lr_schedule = Some(vec![(1, 0.1)]);
    assert!(config.validate().is_err());
    config.lr_schedule = Some(vec![(0, -0.1)]);
    assert!(config.validate().is_err());
    let mut big_batch = TrainConfig::desk(Variant::Baseline, 0);
    big_batch.batch_size = 1000;
    let (tr, va) = load_datasets(&big_batch).unwrap();
    let err = train::<f32>(&big_batch, &tr, &va, None, &mut |_| {}).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}
