use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde_json::json;

use crate::data::{apply_noise, two_view_augment, write_manifest, Dataset};
use crate::detect::classify_noise;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, SparseOverParam};
use crate::model::checkpoint::Checkpoint;
use crate::model::{EmaState, TwoHeadModel};
use crate::nn::Tensor;
use crate::reweight::{refresh, sample_complementary, write_weight_dump, CorrectedLabels, Refresh};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::types::{argmax, softmax_unchecked, WeightTable};

use super::artifacts::*;
use super::config::{Objective, TrainConfig};
use super::objective::{batch_objective, BatchTargets, LossParts};
use super::optim::{cosine_lr, Sgd};
use super::report::{metrics_csv, EpochReport};

const INFERENCE_BATCH: usize = 512;

/// Everything that changes during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: TwoHeadModel,
    pub ema: EmaState,
    pub sgd: Sgd,
    pub sop: SparseOverParam,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, data: &Dataset) -> Result<Self> {
        let model = TwoHeadModel::new(
            &cfg.model_config(),
            data.feature_shape(),
            derive_seed(cfg.seed, Stream::Init, 0, 0),
        )?;
        let ema = EmaState::new(&model, cfg.ema.decay)?;
        let sgd = Sgd::new(&model.params(), cfg.optimizer.momentum, cfg.optimizer.weight_decay);
        let sop = SparseOverParam::new(
            data.len(),
            data.num_classes(),
            cfg.sop,
            derive_seed(cfg.seed, Stream::Slack, 0, 0),
        )?;
        Ok(Self { model, ema, sgd, sop })
    }

    fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut tensors = Vec::new();
        for (i, t) in self.model.state().into_iter().enumerate() {
            tensors.push((format!("model.{i:04}"), t.clone()));
        }
        for (i, t) in self.ema.shadow.iter().enumerate() {
            tensors.push((format!("ema.{i:04}"), t.clone()));
        }
        for (i, t) in self.sgd.buffers.iter().enumerate() {
            tensors.push((format!("sgd.{i:04}"), t.clone()));
        }
        Checkpoint {
            meta,
            tensors,
            arrays: vec![
                ("sop.u".into(), self.sop.u.clone()),
                ("sop.v".into(), self.sop.v.clone()),
                ("sop.u_momentum".into(), self.sop.u_momentum.clone()),
                ("sop.v_momentum".into(), self.sop.v_momentum.clone()),
            ],
        }
    }

    fn restore(&mut self, ckpt: &Checkpoint, ema_updates: u64) -> Result<()> {
        self.model.load_state(&ckpt.group("model."))?;
        let shadow = ckpt.group("ema.");
        if shadow.len() != self.ema.shadow.len() {
            return Err(Error::shape("checkpoint EMA state does not match the model"));
        }
        self.ema.shadow = shadow;
        self.ema.updates = ema_updates;
        let bufs = ckpt.group("sgd.");
        if bufs.len() != self.sgd.buffers.len() {
            return Err(Error::shape("checkpoint optimizer state does not match the model"));
        }
        self.sgd.buffers = bufs;
        for (name, dst) in [
            ("sop.u", &mut self.sop.u),
            ("sop.v", &mut self.sop.v),
            ("sop.u_momentum", &mut self.sop.u_momentum),
            ("sop.v_momentum", &mut self.sop.v_momentum),
        ] {
            let src = ckpt
                .array(name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks `{name}`")))?;
            if src.len() != dst.len() {
                return Err(Error::shape(format!("checkpoint `{name}` has the wrong length")));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }
}

/// Softmax of both heads over the whole dataset, in index order.
pub fn predict(model: &TwoHeadModel, data: &Dataset) -> Result<HeadProbs> {
    let mut probs = HeadProbs {
        positive: Vec::with_capacity(data.len()),
        negative: Vec::with_capacity(data.len()),
    };
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(INFERENCE_BATCH) {
        let out = model.forward(&data.batch(chunk)?)?;
        for i in 0..chunk.len() {
            let to64 = |t: &Tensor| t.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>();
            probs.positive.push(softmax_unchecked(&to64(&out.positive)));
            probs.negative.push(softmax_unchecked(&to64(&out.negative)));
        }
    }
    Ok(probs)
}

fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = probs.iter().zip(labels).filter(|(p, &y)| argmax(p) == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Which head's argmax counts as the model's prediction.
pub fn predictions_head(objective: Objective, probs: &HeadProbs) -> &[Vec<f64>] {
    match objective {
        Objective::NegativeOnly => &probs.negative,
        _ => &probs.positive,
    }
}

/// Inputs that stay fixed during one epoch.
pub struct EpochPlan<'a> {
    pub epoch: usize,
    pub lr: f64,
    pub beta: f64,
    pub weights: &'a WeightTable,
    pub corrected: &'a CorrectedLabels,
    pub feature_std: &'a [f32],
}

/// One pass over the shuffled training set; returns sample-mean losses.
pub fn train_epoch(
    state: &mut TrainState,
    data: &Dataset,
    plan: &EpochPlan<'_>,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    let n = data.len();
    if plan.weights.len() != n {
        return Err(Error::invalid(format!(
            "weight table has {} entries for {n} samples",
            plan.weights.len()
        )));
    }
    let c = data.num_classes();
    let seed = cfg.seed;
    let epoch = plan.epoch as u64;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch, 0));
    let mut comp_rng = stream_rng(seed, Stream::Complementary, epoch, 0);
    let second_view = cfg.objective == Objective::Bidirectional && cfg.loss.gamma > 0.0;
    let lw = LossWeights {
        beta: plan.beta,
        ..cfg.loss
    };
    let use_corrected = cfg.objective == Objective::Bidirectional;
    let width: usize = data.feature_shape().iter().product();

    let mut sums = LossParts::default();
    for chunk in order.chunks(cfg.batch_size) {
        let b = chunk.len();
        let mut labels = Vec::with_capacity(b);
        let mut comp = Vec::with_capacity(b);
        let mut weights = Vec::with_capacity(b);
        for &i in chunk {
            let y = data.examples()[i].noisy_label;
            let corrected = if use_corrected { plan.corrected.get(i)? } else { None };
            labels.push(y);
            comp.push(sample_complementary(y, corrected, c, &mut comp_rng)?);
            weights.push(plan.weights.get(i)?);
        }
        let x = if second_view {
            let mut a = Vec::with_capacity(b * width);
            let mut bv = Vec::with_capacity(b * width);
            for &i in chunk {
                let (v1, v2) = two_view_augment(
                    &data.examples()[i],
                    data.feature_shape(),
                    plan.feature_std,
                    epoch,
                    seed,
                    &cfg.augment,
                );
                a.extend(v1);
                bv.extend(v2);
            }
            a.extend(bv);
            let mut shape = vec![2 * b];
            shape.extend_from_slice(data.feature_shape());
            Tensor::from_vec(&shape, a)?
        } else {
            data.batch(chunk)?
        };

        state.model.zero_grad();
        let (out, cache) = state.model.forward_train(&x)?;
        let targets = BatchTargets {
            indices: chunk,
            labels: &labels,
            complementary: &comp,
            weights: &weights,
        };
        let (parts, grads) = batch_objective(cfg.objective, &out, &targets, &lw, &mut state.sop, second_view)?;
        parts.total()?;
        state.model.backward(cache, &grads)?;
        state.sgd.step(state.model.params_mut(), plan.lr)?;
        crate::losses::PositiveRegularizer::step(&mut state.sop, plan.lr);
        let decay = if cfg.ema.warmup {
            state.ema.warmup_decay()
        } else {
            state.ema.decay
        };
        state.ema.update_with_decay(&state.model.state(), decay)?;

        sums.pl += parts.pl * b as f64;
        sums.nl += parts.nl * b as f64;
        sums.sd += parts.sd * b as f64;
    }
    let nf = n as f64;
    Ok(LossParts {
        pl: sums.pl / nf,
        nl: sums.nl / nf,
        sd: sums.sd / nf,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Continue from `checkpoint_last` if present.
    pub resume: bool,
    /// Stop (as if interrupted) once this many epochs have completed.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub reports: Vec<EpochReport>,
    /// Final EMA-model probabilities; `None` for interrupted runs.
    pub final_probs: Option<HeadProbs>,
    pub final_refresh: Option<Refresh>,
    pub manifest: RunManifest,
}

/// Build the training set (with noise) and optional test set for `cfg`.
pub fn prepare_datasets(cfg: &TrainConfig) -> Result<(Dataset, Option<Dataset>)> {
    let (clean, test) = cfg.data.build(cfg.seed)?;
    let train = apply_noise(&clean, &cfg.noise, cfg.seed)?;
    Ok((train, test))
}

fn checkpoint_meta(
    cfg_text: &str,
    epochs_completed: usize,
    ema_updates: u64,
    reports: &[EpochReport],
) -> serde_json::Value {
    json!({
        "epochs_completed": epochs_completed,
        "ema_updates": ema_updates,
        "config": cfg_text,
        "reports": reports,
    })
}

/// Train according to `cfg`, writing artifacts into `run_dir`.
pub fn run(
    cfg: &TrainConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    run_dir: &Path,
    opts: &RunOptions,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    if train.num_classes() != cfg.data.num_classes {
        return Err(Error::config(
            "data.num_classes",
            format!("dataset has {} classes", train.num_classes()),
        ));
    }
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let cfg_text = cfg.to_toml()?;
    write_file(&run_dir.join(CONFIG_SNAPSHOT), &cfg_text)?;
    write_manifest(&run_dir.join(DATASET_MANIFEST), train)?;

    let mut state = TrainState::new(cfg, train)?;
    let mut reports: Vec<EpochReport> = Vec::new();
    let ckpt_last = run_dir.join(CHECKPOINT_LAST);
    if opts.resume && ckpt_last.exists() {
        let ckpt = Checkpoint::load(&ckpt_last)?;
        if ckpt.meta["config"].as_str() != Some(cfg_text.as_str()) {
            return Err(Error::config(
                "resume",
                "checkpoint_last was written with a different configuration",
            ));
        }
        let updates = ckpt.meta["ema_updates"].as_u64().unwrap_or(0);
        state.restore(&ckpt, updates)?;
        reports = serde_json::from_value(ckpt.meta["reports"].clone()).map_err(|e| Error::Checkpoint {
            path: ckpt_last.clone(),
            message: format!("bad report history: {e}"),
        })?;
    }

    let feature_std = train.feature_std();
    let noisy = train.noisy_labels();
    let clean = train.clean_labels();
    let mut last_probs: Option<HeadProbs> = None;
    let weights_dir = run_dir.join(WEIGHTS_DIR);
    let start = reports.len();

    for epoch in start..cfg.epochs {
        let t0 = Instant::now();
        let refreshed = if epoch >= cfg.warmup_epochs && cfg.objective != Objective::CeOnly {
            let probs = match last_probs.take() {
                Some(p) => p,
                None => predict(&state.ema.averaged_model(&state.model)?, train)?,
            };
            let r = refresh(&probs.positive, &probs.negative, &noisy, cfg.threshold)?;
            if cfg.dump_weights {
                std::fs::create_dir_all(&weights_dir).map_err(|e| Error::io(&weights_dir, e))?;
                write_weight_dump(&weights_dir.join(format!("epoch_{epoch:04}.csv")), &r)?;
            }
            Some(r)
        } else {
            None
        };
        let ones = WeightTable::ones(train.len());
        let undefined = CorrectedLabels::undefined();
        let (weights, corrected, r_est, beta) = match &refreshed {
            Some(r) => (&r.weights, &r.corrected, r.noise_ratio, r.beta),
            None => (&ones, &undefined, 0.0, 0.0),
        };
        let lr = cosine_lr(epoch, cfg);
        let plan = EpochPlan {
            epoch,
            lr,
            beta,
            weights,
            corrected,
            feature_std: &feature_std,
        };
        let losses = train_epoch(&mut state, train, &plan, cfg)?;

        let ema_model = state.ema.averaged_model(&state.model)?;
        let probs = predict(&ema_model, train)?;
        let head = predictions_head(cfg.objective, &probs);
        let test_acc = match test {
            Some(t) => {
                let tp = predict(&ema_model, t)?;
                Some(accuracy(predictions_head(cfg.objective, &tp), &t.noisy_labels()))
            }
            None => None,
        };
        reports.push(EpochReport {
            epoch,
            loss_total: losses.total()?,
            loss_pl: losses.pl,
            loss_nl: losses.nl,
            loss_sd: losses.sd,
            train_acc: accuracy(head, &noisy),
            train_acc_clean: clean.as_ref().map(|y| accuracy(head, y)),
            test_acc,
            r_est,
            beta,
            lr,
            seconds: if cfg.record_wall_clock {
                t0.elapsed().as_secs_f64()
            } else {
                0.0
            },
            weights_all_one: weights.all_ones(),
        });
        last_probs = Some(probs);
        write_file(&run_dir.join(METRICS), &metrics_csv(&reports))?;

        let done = epoch + 1;
        let stopping = opts.stop_after == Some(done) && done < cfg.epochs;
        if stopping || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            state
                .checkpoint(checkpoint_meta(&cfg_text, done, state.ema.updates, &reports))
                .save(&ckpt_last)?;
        }
        if stopping {
            let manifest = RunManifest {
                name: cfg.name.clone(),
                status: RunStatus::Interrupted,
                epochs_completed: done,
                config_snapshot: CONFIG_SNAPSHOT.into(),
                artifacts: [CONFIG_SNAPSHOT, DATASET_MANIFEST, METRICS, CHECKPOINT_LAST]
                    .iter()
                    .map(PathBuf::from)
                    .collect(),
            };
            manifest.write(run_dir)?;
            return Ok(RunArtifacts {
                run_dir: run_dir.to_path_buf(),
                reports,
                final_probs: None,
                final_refresh: None,
                manifest,
            });
        }
    }
    write_file(&run_dir.join(METRICS), &metrics_csv(&reports))?;

    let probs = match last_probs {
        Some(p) => p,
        None => predict(&state.ema.averaged_model(&state.model)?, train)?,
    };
    let fin = refresh(&probs.positive, &probs.negative, &noisy, cfg.threshold)?;
    let corrected = fin.corrected.as_slice().expect("refresh defines corrected labels");
    write_file(&run_dir.join(PROBS_FINAL), &probs_final_csv(train, &probs, corrected))?;
    write_weight_dump(&run_dir.join(WEIGHTS_FINAL), &fin)?;
    let mask = classify_noise(&fin.neg_prob_on_noisy, cfg.threshold)?;
    crate::detect::write_noise_mask(
        &run_dir.join(NOISE_MASK),
        &noisy,
        &fin.neg_prob_on_noisy,
        &mask,
        train.truth_mask().as_ref(),
    )?;
    let mut meta = checkpoint_meta(&cfg_text, reports.len(), state.ema.updates, &reports);
    meta["saved_model"] = json!("ema");
    state.checkpoint(meta).save(&run_dir.join(CHECKPOINT_FINAL))?;

    let manifest = RunManifest {
        name: cfg.name.clone(),
        status: RunStatus::Complete,
        epochs_completed: reports.len(),
        config_snapshot: CONFIG_SNAPSHOT.into(),
        artifacts: [
            CONFIG_SNAPSHOT,
            DATASET_MANIFEST,
            METRICS,
            PROBS_FINAL,
            WEIGHTS_FINAL,
            NOISE_MASK,
            CHECKPOINT_FINAL,
        ]
        .iter()
        .map(PathBuf::from)
        .collect(),
    };
    manifest.write(run_dir)?;
    Ok(RunArtifacts {
        run_dir: run_dir.to_path_buf(),
        reports,
        final_probs: Some(probs),
        final_refresh: Some(fin),
        manifest,
    })
}

/// Load the EMA model saved in a checkpoint.
pub fn load_ema_model(cfg: &TrainConfig, feature_shape: &[usize], path: &Path) -> Result<TwoHeadModel> {
    let ckpt = Checkpoint::load(path)?;
    let mut model = TwoHeadModel::new(&cfg.model_config(), feature_shape, 0)?;
    model.load_state(&ckpt.group("ema."))?;
    Ok(model)
}
