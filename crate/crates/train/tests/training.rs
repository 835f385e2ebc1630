use fdl_core::model::Architecture;
use fdl_train::run::{
    read_run_config, ACCURACY_PLOT, CONFIG_FILE, LOSS_PLOT, METRICS_FILE, MODEL_FILE, SPLIT_FILE,
};
use fdl_train::{
    evaluate, train_on, train_run, Error, LabeledImages, MetricsLog, Model, RunConfig,
};

fn small(arch: Architecture) -> RunConfig {
    RunConfig {
        architecture: arch,
        epochs: 2,
        batch_size: 4,
        lr: 1e-3,
        seed: 11,
        image_size: 32,
        ..RunConfig::default()
    }
}

#[test]
fn same_seed_gives_bit_identical_runs() {
    let train = LabeledImages::synthetic(10, 32, 1);
    let val = LabeledImages::synthetic(5, 32, 50);
    for arch in Architecture::ALL {
        let config = small(arch);
        let a = train_on(&config, &train, &val, |_| {}).unwrap();
        let b = train_on(&config, &train, &val, |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.to_bytes().unwrap(), b.model.to_bytes().unwrap());

        let other = train_on(&RunConfig { seed: 12, ..config }, &train, &val, |_| {}).unwrap();
        assert_ne!(a.log, other.log);
    }
}

#[test]
fn zero_steps_are_rejected() {
    let data = LabeledImages::synthetic(5, 32, 1);
    let config = small(Architecture::DensenetMini);
    let zero_epochs = RunConfig {
        epochs: 0,
        ..config.clone()
    };
    assert!(matches!(
        train_on(&zero_epochs, &data, &data, |_| {}),
        Err(Error::Config(_))
    ));
    let empty = LabeledImages::default();
    assert!(matches!(
        train_on(&config, &empty, &data, |_| {}),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        train_on(&config, &data, &empty, |_| {}),
        Err(Error::Config(_))
    ));
}

#[test]
fn wrong_image_size_is_rejected() {
    let data = LabeledImages::synthetic(5, 16, 1);
    assert!(matches!(
        train_on(&small(Architecture::ResnetMini), &data, &data, |_| {}),
        Err(Error::Config(_))
    ));
}

#[test]
fn non_finite_loss_reports_epoch_and_step() {
    let mut train = LabeledImages::synthetic(8, 32, 1);
    train.images[3].data_mut()[0] = f64::NAN;
    let val = LabeledImages::synthetic(5, 32, 2);
    let config = RunConfig {
        batch_size: 8,
        augment: false,
        ..small(Architecture::DensenetMini)
    };
    match train_on(&config, &train, &val, |_| {}) {
        Err(Error::Diverged { epoch, step, .. }) => assert_eq!((epoch, step), (1, 1)),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn validation_leaves_the_model_untouched() {
    let train = LabeledImages::synthetic(8, 32, 3);
    let val = LabeledImages::synthetic(7, 32, 4);
    let config = small(Architecture::ResnetMini);
    let outcome = train_on(&config, &train, &val, |_| {}).unwrap();
    let model: Model = outcome.model;
    let before = model.to_bytes().unwrap();
    let params = model.flat_params();
    let first = evaluate(&model, &val, &config).unwrap();
    let second = evaluate(&model, &val, &config).unwrap();
    assert_eq!(first, second);
    assert_eq!(model.to_bytes().unwrap(), before);
    assert_eq!(model.flat_params(), params);
    // the last logged validation pass saw the same final model
    let last = outcome.log.rows.last().unwrap();
    assert_eq!((last.val_loss, last.val_acc), first);
}

#[test]
fn epoch_callback_sees_every_row_in_order() {
    let data = LabeledImages::synthetic(6, 32, 9);
    let config = RunConfig {
        epochs: 3,
        ..small(Architecture::DensenetMini)
    };
    let mut seen = Vec::new();
    let outcome = train_on(&config, &data, &data, |m| seen.push(*m)).unwrap();
    assert_eq!(seen, outcome.log.rows);
    assert_eq!(
        seen.iter().map(|m| m.epoch).collect::<Vec<_>>(),
        vec![1, 2, 3]
    );
    for m in &seen {
        assert!(m.train_loss.is_finite() && m.val_loss.is_finite());
        assert!((0.0..=1.0).contains(&m.train_acc) && (0.0..=1.0).contains(&m.val_acc));
    }
}

#[test]
fn best_snapshot_is_kept_on_request() {
    let train = LabeledImages::synthetic(6, 32, 1);
    let val = LabeledImages::synthetic(5, 32, 2);
    let config = RunConfig {
        save_best: true,
        ..small(Architecture::DensenetMini)
    };
    let outcome = train_on(&config, &train, &val, |_| {}).unwrap();
    let best = outcome.best_model.expect("snapshot");
    let epoch = outcome.log.best_epoch().unwrap();
    let (_, acc) = evaluate(&best, &val, &config).unwrap();
    assert_eq!(acc, outcome.log.rows[epoch - 1].val_acc);

    let plain = train_on(&small(Architecture::DensenetMini), &train, &val, |_| {}).unwrap();
    assert!(plain.best_model.is_none());
}

#[test]
fn run_directory_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = fdl_data::synthetic::write_dataset(tmp.path(), 3, 40, 5).unwrap();
    let manifest = fdl_data::load_manifest(&csv, tmp.path().join("images")).unwrap();
    let config = RunConfig {
        epochs: 3,
        save_best: true,
        ..small(Architecture::ResnetMini)
    };
    let out = tmp.path().join("run");
    let mut rows = 0;
    let log = train_run(&config, &manifest, &out, |_| rows += 1).unwrap();
    assert_eq!(rows, 3);

    let metrics = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        for field in line.split(',').skip(1) {
            assert_eq!(field.split('.').nth(1).map(str::len), Some(6), "{line}");
        }
    }
    assert_eq!(
        MetricsLog::read_csv(out.join(METRICS_FILE)).unwrap(),
        log.rounded()
    );

    assert_eq!(read_run_config(&out).unwrap().config, config);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(json["constants"]["adam_beta1"], 0.9);

    let split = std::fs::read_to_string(out.join(SPLIT_FILE)).unwrap();
    assert_eq!(split.lines().next(), Some("id_code,subset"));
    assert_eq!(split.lines().count(), 16);
    assert_eq!(split.lines().filter(|l| l.ends_with(",val")).count(), 3);

    let model = Model::from_bytes(&std::fs::read(out.join(MODEL_FILE)).unwrap()).unwrap();
    assert_eq!(model.input_shape().h, 32);
    assert!(out.join("model_best.fdl").exists());
    for svg in [ACCURACY_PLOT, LOSS_PLOT] {
        let text = std::fs::read_to_string(out.join(svg)).unwrap();
        assert!(
            text.starts_with("<svg") && text.trim_end().ends_with("</svg>"),
            "{svg}"
        );
    }
}

#[test]
fn bad_config_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = fdl_data::synthetic::write_dataset(tmp.path(), 2, 32, 5).unwrap();
    let manifest = fdl_data::load_manifest(&csv, tmp.path().join("images")).unwrap();
    let out = tmp.path().join("run");
    let config = RunConfig {
        lr: -1.0,
        ..small(Architecture::DensenetMini)
    };
    assert!(train_run(&config, &manifest, &out, |_| {}).is_err());
    assert!(!out.exists());
}
