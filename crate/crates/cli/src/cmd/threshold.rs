use serde::{Deserialize, Serialize};
use serde_json::Value;

use spitzkit::milnet::{threshold_accuracy, tune_threshold};
use spitzkit::rng::derive_seed;

use crate::config;
use crate::data::{labeled, load_cohort, load_split, threshold_path, BagStore, Task};
use crate::error::CliError;
use crate::io::Run;

use super::evaluate::{load_ensemble, predict, InferenceConfig};

const PREDICT_STREAM: u64 = 0x7E51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldThreshold {
    pub fold: usize,
    pub threshold: f64,
    pub validation_accuracy: f64,
    pub n_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub task: Task,
    pub positive_class: String,
    pub folds: Vec<FoldThreshold>,
    /// Mean of the fold thresholds; applied to the averaged ensemble output.
    pub ensemble_threshold: f64,
}

pub fn run(mut run: Run, cfg: &Value, task: Task) -> Result<(), CliError> {
    config::check_keys(cfg, &["inference"])?;
    if task.n_classes() != 2 {
        return Err(CliError::config(format!(
            "threshold tuning needs a binary task; {} has {} classes",
            task.name(),
            task.n_classes()
        )));
    }
    let inference = config::overlay(InferenceConfig::default(), cfg, "inference")?;
    let cases = load_cohort(&run)?;
    let split = load_split(&run, &cases)?;
    let store = BagStore::open(&run)?;
    let models = load_ensemble(&run, task, split.folds.len())?;
    let seed = derive_seed(run.seed, PREDICT_STREAM);

    let mut folds = Vec::with_capacity(models.len());
    for (fold, model) in models.iter().enumerate() {
        let val = labeled(&cases, &split.folds[fold], task);
        let mut scores = Vec::with_capacity(val.len());
        for (case, _) in &val {
            let p = predict(
                std::slice::from_ref(model),
                &store,
                case,
                None,
                &inference,
                seed,
            )?;
            scores.push(p.probs[1]);
        }
        let positive: Vec<bool> = val.iter().map(|(_, l)| *l == 1).collect();
        let threshold = tune_threshold(&scores, &positive)
            .map_err(|e| CliError::config(format!("fold {fold}: {e}")))?;
        folds.push(FoldThreshold {
            fold,
            threshold,
            validation_accuracy: threshold_accuracy(&scores, &positive, threshold),
            n_cases: val.len(),
        });
    }
    let ensemble_threshold = folds.iter().map(|f| f.threshold).sum::<f64>() / folds.len() as f64;
    let out = Thresholds {
        task,
        positive_class: task.class_names()[1].clone(),
        folds,
        ensemble_threshold,
    };
    run.write(
        &threshold_path(task),
        &serde_json::to_vec_pretty(&out).expect("thresholds serialize"),
    )?;
    run.finish(&format!("tune-threshold-{}", task.name()), &inference)
}
