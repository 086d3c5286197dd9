//! The training loop: warm-up, per-epoch reweighting refresh, momentum SGD
//! with cosine annealing, EMA averaging, checkpoints and run artifacts.

pub mod artifacts;
mod config;
mod objective;
mod optim;
mod report;
mod run;

pub use artifacts::{read_metrics, read_probs_final, HeadProbs, ProbRecord, RunManifest, RunStatus};
pub use config::{
    parse_override, EmaConfig, ModelSection, Objective, OptimizerConfig, ScheduleConfig, TrainConfig, PRESETS,
};
pub use objective::{batch_objective, BatchTargets, LossParts};
pub use optim::{cosine_lr, Sgd};
pub use report::{metrics_csv, EpochReport, METRICS_HEADER};
pub use run::{
    load_ema_model, predict, predictions_head, prepare_datasets, run, train_epoch, EpochPlan, RunArtifacts, RunOptions,
    TrainState,
};
