use bilearn::data::Dataset;
use bilearn::reweight::CorrectedLabels;
use bilearn::train::*;
use bilearn::types::{Example, LabelSpace, WeightTable};
use bilearn::Error;

fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// A small blob run that finishes in well under a second.
fn small(extra: &[(&str, &str)]) -> TrainConfig {
    let mut o = ov(&[
        ("data.n", "300"),
        ("data.test_n", "90"),
        ("data.dim", "8"),
        ("epochs", "6"),
        ("warmup_epochs", "2"),
        ("schedule.t_max", "5"),
        ("batch_size", "64"),
        ("checkpoint_every", "1"),
    ]);
    o.extend(ov(extra));
    TrainConfig::load("desk_blobs", &o).unwrap()
}

fn run_in(cfg: &TrainConfig, dir: &std::path::Path, opts: RunOptions) -> RunArtifacts {
    let (train, test) = prepare_datasets(cfg).unwrap();
    run(cfg, &train, test.as_ref(), dir, &opts).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let ls = LabelSpace::new(3).unwrap();
    let examples = (0..4)
        .map(|i| Example {
            index: i,
            features: vec![i as f32, 1.0 - i as f32, 0.5],
            noisy_label: i % 3,
            clean_label: Some(i % 3),
        })
        .collect();
    let data = Dataset::new(ls, vec![3], examples).unwrap();
    let cfg = small(&[("batch_size", "4"), ("data.dim", "3")]);
    let mut state = TrainState::new(&cfg, &data).unwrap();
    let before: Vec<Vec<f32>> = state.model.params().iter().map(|p| p.value.data().to_vec()).collect();
    let weights = WeightTable::ones(4);
    let corrected = CorrectedLabels::undefined();
    let plan = EpochPlan {
        epoch: 0,
        lr: 0.0,
        beta: 0.0,
        weights: &weights,
        corrected: &corrected,
        feature_std: &data.feature_std(),
    };
    let losses = train_epoch(&mut state, &data, &plan, &cfg).unwrap();
    let after: Vec<Vec<f32>> = state.model.params().iter().map(|p| p.value.data().to_vec()).collect();
    assert_eq!(before, after);
    assert!(losses.total().unwrap().is_finite());
    assert!(losses.pl > 0.0 && losses.nl > 0.0 && losses.sd > 0.0);

    let short = WeightTable::ones(3);
    let plan = EpochPlan {
        weights: &short,
        ..plan
    };
    assert!(train_epoch(&mut state, &data, &plan, &cfg).is_err());
}

#[test]
fn warmup_epochs_use_unit_weights_and_zero_beta() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_in(&small(&[]), dir.path(), RunOptions::default());
    assert_eq!(a.reports.len(), 6);
    for r in &a.reports[..2] {
        assert!(r.weights_all_one);
        assert_eq!((r.r_est, r.beta), (0.0, 0.0));
    }
    for r in &a.reports[2..] {
        assert!(!r.weights_all_one);
        assert!((r.beta - 50.0 * r.r_est * r.r_est).abs() < 1e-12);
    }
    for r in &a.reports {
        assert!((r.loss_pl + r.loss_nl + r.loss_sd - r.loss_total).abs() < 1e-6);
    }
    let lrs: Vec<f64> = a.reports.iter().map(|r| r.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(lrs[0], 0.04);
}

#[test]
fn pure_warmup_run_never_refreshes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&[("epochs", "2"), ("warmup_epochs", "2")]);
    let a = run_in(&cfg, dir.path(), RunOptions::default());
    assert!(a.reports.iter().all(|r| r.weights_all_one && r.r_est == 0.0));
    assert_eq!(a.manifest.status, RunStatus::Complete);
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&[("dump_weights", "true")]);
    let a = run_in(&cfg, dir.path(), RunOptions::default());
    assert!(a.manifest.missing(dir.path()).is_empty());
    for f in [
        "config_snapshot",
        "metrics.csv",
        "probs_final.csv",
        "weights_final.csv",
        "noise_mask.csv",
        "checkpoint_final",
        "dataset_manifest.csv",
        "manifest.json",
        "weights/epoch_0002.csv",
        "weights/epoch_0005.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(!dir.path().join("weights/epoch_0001.csv").exists());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(metrics.lines().count(), 7);
    assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap().len(), 6);
    let probs = read_probs_final(&dir.path().join("probs_final.csv")).unwrap();
    assert_eq!(probs.len(), 300);
    assert!(probs.iter().all(|p| p.clean_label.is_some()));
    let snapshot = std::fs::read_to_string(dir.path().join("config_snapshot")).unwrap();
    assert_eq!(TrainConfig::from_toml(&snapshot, &[]).unwrap(), cfg);
    let m = RunManifest::read(dir.path()).unwrap();
    assert_eq!(m, a.manifest);
    // the saved model reproduces the final probability dump
    let (train, _) = prepare_datasets(&cfg).unwrap();
    let model = load_ema_model(&cfg, train.feature_shape(), &dir.path().join("checkpoint_final")).unwrap();
    assert_eq!(&predict(&model, &train).unwrap(), a.final_probs.as_ref().unwrap());
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let (d1, d2, d3) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let cfg = small(&[]);
    let a = run_in(&cfg, d1.path(), RunOptions::default());
    let b = run_in(&cfg, d2.path(), RunOptions::default());
    assert_eq!(a.reports, b.reports);
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    for f in [
        "metrics.csv",
        "probs_final.csv",
        "weights_final.csv",
        "noise_mask.csv",
        "checkpoint_final",
    ] {
        assert_eq!(read(&d1, f), read(&d2, f), "{f} differs");
    }
    let c = run_in(&small(&[("seed", "1")]), d3.path(), RunOptions::default());
    assert_ne!(a.reports, c.reports);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = small(&[]);
    let full = tempfile::tempdir().unwrap();
    let a = run_in(&cfg, full.path(), RunOptions::default());
    for stop in [1, 2, 4] {
        let part = tempfile::tempdir().unwrap();
        let cut = run_in(
            &cfg,
            part.path(),
            RunOptions {
                resume: false,
                stop_after: Some(stop),
            },
        );
        assert_eq!(cut.manifest.status, RunStatus::Interrupted);
        assert_eq!(cut.reports.len(), stop);
        assert!(!part.path().join("probs_final.csv").exists());
        let b = run_in(
            &cfg,
            part.path(),
            RunOptions {
                resume: true,
                stop_after: None,
            },
        );
        assert_eq!(a.reports, b.reports, "stop after {stop}");
        for f in ["metrics.csv", "probs_final.csv", "checkpoint_final"] {
            assert_eq!(
                std::fs::read(full.path().join(f)).unwrap(),
                std::fs::read(part.path().join(f)).unwrap(),
                "{f} differs after resuming at {stop}"
            );
        }
    }
}

#[test]
fn resume_rejects_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        &small(&[]),
        dir.path(),
        RunOptions {
            resume: false,
            stop_after: Some(2),
        },
    );
    let cfg = small(&[("lr_init", "0.01")]);
    let (train, test) = prepare_datasets(&cfg).unwrap();
    let err = run(
        &cfg,
        &train,
        test.as_ref(),
        dir.path(),
        &RunOptions {
            resume: true,
            stop_after: None,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
}

#[test]
fn ablation_objectives_run() {
    for obj in ["negative-only", "ce-only"] {
        let dir = tempfile::tempdir().unwrap();
        let a = run_in(&small(&[("objective", obj)]), dir.path(), RunOptions::default());
        let last = a.reports.last().unwrap();
        assert!(last.train_acc_clean.unwrap() > 0.5, "{obj}: {last:?}");
        if obj == "negative-only" {
            assert_eq!((last.loss_pl, last.loss_sd), (0.0, 0.0));
        } else {
            assert_eq!((last.loss_nl, last.loss_sd, last.r_est), (0.0, 0.0, 0.0));
        }
    }
}

#[test]
fn small_cnn_trains_on_images() {
    // 8×8 synthetic "images": class k brightens channel k.
    let ls = LabelSpace::new(3).unwrap();
    let examples = (0..48)
        .map(|i| {
            let k = i % 3;
            let features = (0..3 * 8 * 8)
                .map(|j| if j / 64 == k { 1.0 } else { 0.0 } + ((i * 7 + j * 13) % 5) as f32 * 0.05)
                .collect();
            Example {
                index: i,
                features,
                noisy_label: k,
                clean_label: Some(k),
            }
        })
        .collect();
    let data = Dataset::new(ls, vec![3, 8, 8], examples).unwrap();
    let cfg = small(&[
        ("model.backbone", "small-cnn"),
        ("model.num_shallow_heads", "2"),
        ("model.feature_dim", "8"),
        ("batch_size", "16"),
        ("epochs", "3"),
        ("warmup_epochs", "1"),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let a = run(&cfg, &data, None, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(a.reports.len(), 3);
    assert!(a.reports.iter().all(|r| r.loss_total.is_finite() && r.loss_sd > 0.0));
}
