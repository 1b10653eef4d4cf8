use emomatch::data_io::{gen_synthetic, DatasetBundle, SyntheticSpec};
use emomatch::numerics::Checkpoint;
use emomatch::objectives::{LossConfig, Objective};
use emomatch::trainer::{load_nets, resume, train, Nets, TrainConfig};
use emomatch::Error;

fn bundle(separation: f64) -> DatasetBundle {
    let spec = SyntheticSpec {
        per_class: 20,
        dim: 8,
        tag_dim: 4,
        separation,
        ..Default::default()
    };
    gen_synthetic(&spec, 2).unwrap().bundle
}

fn config(objective: Objective, epochs: usize) -> TrainConfig {
    TrainConfig {
        loss: LossConfig {
            objective,
            ..Default::default()
        },
        lr: 1e-3,
        batch_size: 16,
        max_epochs: epochs,
        patience: 0,
        hidden: vec![16],
        output_dim: 8,
        seed: 11,
        ..Default::default()
    }
}

fn param_bits(nets: &Nets) -> Vec<u64> {
    nets.named()
        .iter()
        .flat_map(|(name, net)| {
            net.params(name)
                .into_iter()
                .flat_map(|(_, v)| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        })
        .collect()
}

#[test]
fn same_seed_gives_bitwise_identical_parameters() {
    let b = bundle(20.0);
    for objective in Objective::ALL {
        let (a, ra) = train(&b, &config(objective, 3)).unwrap();
        let (c, rc) = train(&b, &config(objective, 3)).unwrap();
        assert_eq!(param_bits(&a), param_bits(&c), "{objective}");
        assert_eq!(ra.history, rc.history);
        assert_eq!(ra.selected_epoch, rc.selected_epoch);
    }
}

#[test]
fn different_seeds_give_different_parameters() {
    let b = bundle(20.0);
    let (a, _) = train(&b, &config(Objective::Triplet, 1)).unwrap();
    let (c, _) = train(&b, &TrainConfig { seed: 12, ..config(Objective::Triplet, 1) }).unwrap();
    assert_ne!(param_bits(&a), param_bits(&c));
}

#[test]
fn split_run_resumed_matches_uninterrupted_run() {
    let b = bundle(20.0);
    let dir = tempfile::tempdir().unwrap();
    for objective in Objective::ALL {
        let full_path = dir.path().join(format!("{objective}-full.ckpt"));
        let part_path = dir.path().join(format!("{objective}-part.ckpt"));
        let full_cfg = TrainConfig {
            checkpoint: Some(full_path.clone()),
            ..config(objective, 10)
        };
        let (full, full_report) = train(&b, &full_cfg).unwrap();

        let part_cfg = TrainConfig {
            checkpoint: Some(part_path.clone()),
            ..config(objective, 5)
        };
        train(&b, &part_cfg).unwrap();
        let resumed_cfg = TrainConfig {
            max_epochs: 10,
            ..part_cfg
        };
        let (resumed, resumed_report) = resume(&Checkpoint::load(&part_path).unwrap(), &b, &resumed_cfg).unwrap();

        assert_eq!(param_bits(&full), param_bits(&resumed), "{objective}");
        assert_eq!(full_report.history, resumed_report.history, "{objective}");
        assert_eq!(full_report.optimizer_steps, resumed_report.optimizer_steps);
        assert_eq!(std::fs::read(&full_path).unwrap(), std::fs::read(&part_path).unwrap(), "{objective}");
    }
}

#[test]
fn resuming_with_no_epochs_left_changes_nothing() {
    let b = bundle(20.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = TrainConfig {
        checkpoint: Some(path.clone()),
        ..config(Objective::TripletEmoSim, 3)
    };
    let (nets, report) = train(&b, &cfg).unwrap();
    let before = std::fs::read(&path).unwrap();
    let (again, again_report) = resume(&Checkpoint::from_bytes(&before).unwrap(), &b, &cfg).unwrap();
    assert_eq!(param_bits(&nets), param_bits(&again));
    assert_eq!(report.history, again_report.history);
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn max_epochs_zero_keeps_the_initialization() {
    let b = bundle(20.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = TrainConfig {
        checkpoint: Some(path.clone()),
        ..config(Objective::Triplet, 0)
    };
    let (nets, report) = train(&b, &cfg).unwrap();
    let fresh = Nets::init(&cfg, b.speech_dim(), b.music_dim(), None).unwrap();
    assert_eq!(param_bits(&nets), param_bits(&fresh));
    assert_eq!(report.history.len(), 1);
    assert_eq!(report.optimizer_steps, 0);
    let stored = load_nets(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(param_bits(&stored), param_bits(&fresh));
}

#[test]
fn training_never_touches_the_features() {
    let b = bundle(20.0);
    let before = b.feature_checksum();
    let copy = b.clone();
    for objective in Objective::ALL {
        train(&b, &config(objective, 2)).unwrap();
    }
    assert_eq!(b.feature_checksum(), before);
    assert_eq!(b.speech, copy.speech);
    assert_eq!(b.music, copy.music);
    assert_eq!(b.tags, copy.tags);
}

#[test]
fn train_loss_falls_over_five_epoch_windows() {
    let b = gen_synthetic(&SyntheticSpec::default(), 0).unwrap().bundle;
    let cfg = TrainConfig {
        max_epochs: 25,
        patience: 0,
        ..Default::default()
    };
    let (_, report) = train(&b, &cfg).unwrap();
    let losses: Vec<f64> = report.history.iter().filter_map(|r| r.train.map(|t| t.total)).collect();
    assert_eq!(losses.len(), 25);
    let windows: Vec<f64> = losses.chunks(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(windows.windows(2).all(|w| w[1] <= w[0]), "{windows:?}");
}

#[test]
fn selected_epoch_is_the_first_best_validation_mrr() {
    let b = bundle(5.0);
    let (_, report) = train(&b, &config(Objective::Triplet, 8)).unwrap();
    let best = report.history.iter().map(|r| r.valid_mrr).fold(f64::NEG_INFINITY, f64::max);
    let first = report.history.iter().find(|r| r.valid_mrr == best).unwrap().epoch;
    assert_eq!(report.selected_epoch, first);
    assert_eq!(report.selected_valid_mrr, best);
}

#[test]
fn patience_stops_a_stalled_run() {
    let b = bundle(20.0);
    let cfg = TrainConfig {
        patience: 2,
        lr: 1e-12,
        ..config(Objective::Triplet, 30)
    };
    let (_, report) = train(&b, &cfg).unwrap();
    assert!(report.stopped_early);
    assert!(report.epochs_completed < 30);
}

#[test]
fn overflowing_features_abort_with_coordinates() {
    let mut b = bundle(20.0);
    for r in &mut b.speech {
        r.vector.iter_mut().for_each(|v| *v = 1e308);
    }
    let err = train(&b, &config(Objective::Triplet, 3)).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, batch: 0 }), "{err:?}");
    assert!(!err.is_usage());
}

#[test]
fn corrupted_checkpoint_magic_is_rejected() {
    let b = bundle(20.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    train(
        &b,
        &TrainConfig {
            checkpoint: Some(path.clone()),
            ..config(Objective::Triplet, 1)
        },
    )
    .unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bytes).is_err());
}

#[test]
fn resume_rejects_a_mismatched_configuration() {
    let b = bundle(20.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = TrainConfig {
        checkpoint: Some(path.clone()),
        ..config(Objective::Triplet, 1)
    };
    train(&b, &cfg).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let wider = TrainConfig {
        hidden: vec![32],
        max_epochs: 2,
        ..cfg.clone()
    };
    assert!(matches!(resume(&ckpt, &b, &wider), Err(Error::Incompatible(_))));
    let other = TrainConfig {
        loss: LossConfig {
            objective: Objective::TripletEmoSim,
            ..Default::default()
        },
        max_epochs: 2,
        ..cfg
    };
    assert!(matches!(resume(&ckpt, &b, &other), Err(Error::Incompatible(_))));
}
