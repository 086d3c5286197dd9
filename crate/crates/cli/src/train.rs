use std::path::{Path, PathBuf};

use bilearn::train::{artifacts, prepare_datasets, run, RunOptions, RunStatus, TrainConfig};

use crate::output::{guard_overwrite, Failure};
use crate::{detect, report};

pub struct TrainArgs<'a> {
    pub config: &'a str,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub overrides: Vec<(String, String)>,
    pub run_dir: Option<PathBuf>,
    pub force: bool,
    pub resume: bool,
    pub stop_after: Option<usize>,
}

/// Every file a run or a later command may leave in a run directory.
fn run_outputs(dir: &Path) -> Vec<PathBuf> {
    [
        artifacts::CONFIG_SNAPSHOT,
        artifacts::METRICS,
        artifacts::PROBS_FINAL,
        artifacts::WEIGHTS_FINAL,
        artifacts::NOISE_MASK,
        artifacts::CHECKPOINT_FINAL,
        artifacts::CHECKPOINT_LAST,
        artifacts::DATASET_MANIFEST,
        artifacts::RUN_MANIFEST,
        artifacts::WEIGHTS_DIR,
        detect::DETECT_JSON,
        detect::SWEEP_CSV,
        detect::SWEEP_SVG,
        report::REPORT_DIR,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}

fn clear(paths: &[PathBuf]) -> Result<(), Failure> {
    for p in paths.iter().filter(|p| p.exists()) {
        let res = if p.is_dir() {
            std::fs::remove_dir_all(p)
        } else {
            std::fs::remove_file(p)
        };
        res.map_err(|e| Failure::runtime(format!("removing {}: {e}", p.display())))?;
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs<'_>) -> Result<(), Failure> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(epochs) = args.epochs {
        overrides.push(("epochs".into(), epochs.to_string()));
    }
    let cfg = TrainConfig::load(args.config, &overrides)?;
    let dir = args
        .run_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", cfg.name, cfg.seed)));

    if !args.resume {
        let outputs = run_outputs(&dir);
        guard_overwrite(&outputs, args.force)?;
        clear(&outputs)?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Failure::runtime(format!("creating {}: {e}", dir.display())))?;

    let (train, test) = prepare_datasets(&cfg)?;
    eprintln!(
        "training `{}` ({} samples, {} classes, {} epochs) into {}",
        cfg.name,
        train.len(),
        train.num_classes(),
        cfg.epochs,
        dir.display()
    );
    let opts = RunOptions {
        resume: args.resume,
        stop_after: args.stop_after,
    };
    let art = run(&cfg, &train, test.as_ref(), &dir, &opts)?;

    if let Some(last) = art.reports.last() {
        let test = last.test_acc.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!(
            "epoch {}: loss {:.4}, train acc {:.4}, test acc {test}, r {:.4}",
            last.epoch + 1,
            last.loss_total,
            last.train_acc,
            last.r_est
        );
    }
    match art.manifest.status {
        RunStatus::Complete => println!("run complete: {}", dir.display()),
        RunStatus::Interrupted => println!(
            "run stopped after {} epochs; continue with --resume: {}",
            art.manifest.epochs_completed,
            dir.display()
        ),
    }
    Ok(())
}
