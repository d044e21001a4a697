use serde::Serialize;
use serde_json::Value;

use spitzkit::milnet::{train, MilConfig, MilExample, MilModel, TrainConfig};
use spitzkit::rng::{derive_seed, stream};

use crate::config;
use crate::data::{checkpoint_path, labeled, load_cohort, load_split, log_path, BagStore, Task};
use crate::error::CliError;
use crate::io::Run;
use crate::Profile;

const INIT_STREAM: u64 = 0x1417;
const TRAIN_STREAM: u64 = 0x7EA1;

pub fn model_preset(profile: Profile, input_dim: usize, n_classes: usize) -> MilConfig {
    match profile {
        Profile::Desk => MilConfig::desk(input_dim, n_classes),
        Profile::Paper => MilConfig::paper(input_dim, n_classes),
    }
}

pub fn train_preset(profile: Profile, seed: u64) -> TrainConfig {
    match profile {
        Profile::Desk => TrainConfig::desk(seed),
        Profile::Paper => TrainConfig::paper(seed),
    }
}

/// `n / (K * n_k)` over the training labels.
pub fn balanced_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>, CliError> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some(k) = counts.iter().position(|c| *c == 0) {
        return Err(CliError::config(format!(
            "class {k} has no training cases; cannot balance class weights"
        )));
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| n / (n_classes as f64 * c as f64))
        .collect())
}

#[derive(Debug, Serialize)]
struct Effective<'a> {
    task: Task,
    fold: usize,
    model: &'a MilConfig,
    train: &'a TrainConfig,
}

pub fn run(mut run: Run, cfg: &Value, task: Task, fold: usize) -> Result<(), CliError> {
    config::check_keys(cfg, &["model", "train", "balanced_class_weights"])?;
    let cases = load_cohort(&run)?;
    let split = load_split(&run, &cases)?;
    if fold >= split.folds.len() {
        return Err(CliError::config(format!(
            "fold {fold} out of range for {} folds",
            split.folds.len()
        )));
    }
    let store = BagStore::open(&run)?;

    let mut folds = Vec::with_capacity(split.folds.len());
    for ids in &split.folds {
        let mut examples = Vec::new();
        for (case, label) in labeled(&cases, ids, task) {
            let tiles = store.pooled(case)?.vectors;
            examples.push(MilExample {
                case_id: case.case_id.clone(),
                label,
                tiles,
            });
        }
        folds.push(examples);
    }

    let model_cfg = config::overlay(
        model_preset(run.profile, store.dim()?, task.n_classes()),
        cfg,
        "model",
    )?;
    if model_cfg.n_classes != task.n_classes() {
        return Err(CliError::config(format!(
            "model has {} classes but task {} has {}",
            model_cfg.n_classes,
            task.name(),
            task.n_classes()
        )));
    }
    let seed = derive_seed(derive_seed(run.seed, TRAIN_STREAM), fold as u64);
    let mut train_cfg = config::overlay(train_preset(run.profile, seed), cfg, "train")?;
    train_cfg.seed = seed;
    let balance =
        config::section::<bool>(cfg, "balanced_class_weights")?.unwrap_or(task == Task::Category);
    if balance && train_cfg.class_weights.is_none() {
        let labels: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().map(|e| e.label))
            .collect();
        train_cfg.class_weights = Some(balanced_weights(&labels, task.n_classes())?);
    }

    let init = MilModel::new(
        model_cfg.clone(),
        &mut stream(derive_seed(derive_seed(run.seed, INIT_STREAM), fold as u64)),
    )?;
    let outcome = train(&init, &folds, fold, &train_cfg)?;
    run.write(&checkpoint_path(task, fold), &outcome.model.to_bytes())?;
    run.write(&log_path(task, fold), outcome.log.to_csv().as_bytes())?;
    let name = format!("train-{}-fold{fold}", task.name());
    run.finish(
        &name,
        &Effective {
            task,
            fold,
            model: &model_cfg,
            train: &train_cfg,
        },
    )
}
