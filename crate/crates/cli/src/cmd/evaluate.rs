use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use spitzkit::clinical::{encode_clinical, fit_logreg, fusion_features, FeatureLayout, FitOptions};
use spitzkit::cohort::{LesionCase, SlideKind};
use spitzkit::metrics::{argmax, evaluation_rows, BootstrapConfig, EvalSet, ReportRow};
use spitzkit::milnet::{predict_case, MilModel, Prediction};
use spitzkit::rng::{derive_seed, substream};

use crate::config;
use crate::data::{
    checkpoint_path, labeled, load_cohort, load_split, metrics_path, predictions_path,
    threshold_path, BagStore, Task,
};
use crate::error::CliError;
use crate::io::{csv_bytes, Run};
use crate::Profile;

use super::threshold::Thresholds;

const PREDICT_STREAM: u64 = 0x9ED1;
const BOOT_STREAM: u64 = 0xB007;

pub const METRICS_HEADER: [&str; 8] = [
    "task",
    "model",
    "slide_kind",
    "metric",
    "class",
    "point",
    "lo",
    "hi",
];

/// Slide-kind label of rows that do not depend on images.
pub const ANY_SLIDE: &str = "ANY";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Random subsets averaged for cases above the feature cap.
    pub subsets: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { subsets: 10 }
    }
}

pub fn bootstrap_preset(profile: Profile, seed: u64) -> BootstrapConfig {
    let resamples = match profile {
        Profile::Desk => 1_000,
        Profile::Paper => 10_000,
    };
    BootstrapConfig {
        resamples,
        seed,
        ..BootstrapConfig::default()
    }
}

/// The fold models of `task`, all sharing one architecture.
pub fn load_ensemble(run: &Run, task: Task, n_folds: usize) -> Result<Vec<MilModel>, CliError> {
    let mut models: Vec<MilModel> = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        let path = checkpoint_path(task, fold);
        let m = MilModel::from_bytes(&run.read(&path, &format!("checkpoint for fold {fold}"))?)
            .map_err(|e| CliError::config(format!("{path}: {e}")))?;
        if m.config.n_classes != task.n_classes() {
            return Err(CliError::config(format!(
                "{path} predicts {} classes but task {} has {}",
                m.config.n_classes,
                task.name(),
                task.n_classes()
            )));
        }
        if let Some(first) = models.first() {
            if first.config != m.config {
                return Err(CliError::config(format!(
                    "{path} differs in architecture from fold 0"
                )));
            }
        }
        models.push(m);
    }
    Ok(models)
}

pub fn predict(
    models: &[MilModel],
    store: &BagStore,
    case: &LesionCase,
    kind: Option<SlideKind>,
    inference: &InferenceConfig,
    seed: u64,
) -> Result<Prediction, CliError> {
    let bags = store.case_bags(case, kind)?;
    let refs: Vec<_> = bags.iter().collect();
    let cap = models[0].config.feature_cap;
    Ok(predict_case(
        models,
        &refs,
        cap,
        inference.subsets,
        &mut substream(seed, case_key(&case.case_id)),
    )?)
}

/// Stable per-case stream index.
fn case_key(case_id: &str) -> u64 {
    case_id.bytes().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Thresholded decision for binary tasks, argmax otherwise.
fn decide(probs: &[f64], threshold: Option<f64>) -> usize {
    match threshold {
        Some(t) if probs.len() == 2 => usize::from(probs[1] >= t),
        _ => argmax(probs),
    }
}

#[derive(Debug, Serialize)]
struct Effective {
    task: Task,
    inference: InferenceConfig,
    bootstrap: BootstrapConfig,
    clinical_fit: FitOptions,
    threshold: Option<f64>,
    n_models: usize,
}

struct Scored {
    model: &'static str,
    slide_kind: String,
    set: EvalSet,
}

pub fn run(mut run: Run, cfg: &Value, task: Task) -> Result<(), CliError> {
    config::check_keys(cfg, &["inference", "bootstrap", "clinical_fit"])?;
    let inference = config::overlay(InferenceConfig::default(), cfg, "inference")?;
    let boot = config::overlay(
        bootstrap_preset(run.profile, derive_seed(run.seed, BOOT_STREAM)),
        cfg,
        "bootstrap",
    )?;
    let fit_opts = config::overlay(FitOptions::default(), cfg, "clinical_fit")?;

    let cases = load_cohort(&run)?;
    let split = load_split(&run, &cases)?;
    let store = BagStore::open(&run)?;
    let models = load_ensemble(&run, task, split.folds.len())?;
    let threshold = match run.read(&threshold_path(task), "thresholds") {
        Ok(bytes) if task.n_classes() == 2 => {
            let t: Thresholds = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::config(format!("{}: {e}", threshold_path(task))))?;
            Some(t.ensemble_threshold)
        }
        Ok(_) => None,
        Err(CliError::MissingArtifact { .. }) => None,
        Err(e) => return Err(e),
    };

    let dev_ids: BTreeSet<String> = split.folds.iter().flatten().cloned().collect();
    let dev = labeled(&cases, &dev_ids, task);
    let test = labeled(&cases, &split.test, task);
    if test.is_empty() {
        return Err(CliError::config(format!(
            "no test cases for task {}",
            task.name()
        )));
    }
    let seed = derive_seed(run.seed, PREDICT_STREAM);
    let ids =
        |v: &[(&LesionCase, usize)]| v.iter().map(|(c, _)| c.case_id.clone()).collect::<Vec<_>>();
    let labels = |v: &[(&LesionCase, usize)]| v.iter().map(|(_, l)| *l).collect::<Vec<_>>();

    // Clinical-only baseline, fitted on the development set.
    let clin = |v: &[(&LesionCase, usize)]| {
        v.iter()
            .map(|(c, _)| encode_clinical(&c.clinical).0.to_vec())
            .collect::<Vec<_>>()
    };
    let (clinical, _) = fit_logreg(
        &clin(&dev),
        &labels(&dev),
        task.n_classes(),
        FeatureLayout::Clinical,
        &fit_opts,
    )?;

    // Fusion of clinical features with the ensemble's penultimate vector.
    let embed_dim = models[0].config.embed_dim;
    let mut dev_fused = Vec::with_capacity(dev.len());
    for (case, _) in &dev {
        let p = predict(&models, &store, case, None, &inference, seed)?;
        dev_fused.push(fusion_features(
            &case.case_id,
            Some(&case.clinical),
            &p.penultimate,
        )?);
    }
    let (fusion, _) = fit_logreg(
        &dev_fused,
        &labels(&dev),
        task.n_classes(),
        FeatureLayout::ClinicalImage { embed_dim },
        &fit_opts,
    )?;

    let mut scored = Vec::new();
    let probs: Vec<Vec<f64>> = clin(&test)
        .iter()
        .map(|x| clinical.predict_proba(x))
        .collect::<Result<_, _>>()?;
    let predicted = probs.iter().map(|p| argmax(p)).collect();
    scored.push(Scored {
        model: "clinical",
        slide_kind: ANY_SLIDE.into(),
        set: EvalSet::new(ids(&test), labels(&test), probs, predicted)?,
    });

    for kind in SlideKind::ALL {
        let subset: Vec<(&LesionCase, usize)> = test
            .iter()
            .filter(|(c, _)| c.bag_refs.contains_key(&kind))
            .cloned()
            .collect();
        if subset.is_empty() {
            continue;
        }
        let (mut mil, mut fused) = (Vec::new(), Vec::new());
        for (case, _) in &subset {
            let p = predict(&models, &store, case, Some(kind), &inference, seed)?;
            fused.push(fusion.predict_proba(&fusion_features(
                &case.case_id,
                Some(&case.clinical),
                &p.penultimate,
            )?)?);
            mil.push(p.probs);
        }
        let mil_pred = mil.iter().map(|p| decide(p, threshold)).collect();
        let fused_pred = fused.iter().map(|p| argmax(p)).collect();
        scored.push(Scored {
            model: "mil",
            slide_kind: kind.as_str().into(),
            set: EvalSet::new(ids(&subset), labels(&subset), mil, mil_pred)?,
        });
        scored.push(Scored {
            model: "fusion",
            slide_kind: kind.as_str().into(),
            set: EvalSet::new(ids(&subset), labels(&subset), fused, fused_pred)?,
        });
    }

    let names = task.class_names();
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut pred_rows: Vec<Vec<String>> = Vec::new();
    for s in &scored {
        rows.extend(evaluation_rows(
            &s.set,
            &names,
            task.name(),
            s.model,
            &s.slide_kind,
            &boot,
        )?);
        for i in 0..s.set.len() {
            let mut r = vec![
                s.model.to_string(),
                s.slide_kind.clone(),
                s.set.case_ids[i].clone(),
                s.set.labels[i].to_string(),
                s.set.predicted[i].to_string(),
            ];
            r.extend(s.set.probs[i].iter().map(|p| p.to_string()));
            pred_rows.push(r);
        }
    }
    run.write(&metrics_path(task), &csv_bytes(&rows, &METRICS_HEADER)?)?;
    let mut header = vec![
        "model".to_string(),
        "slide_kind".into(),
        "case_id".into(),
        "label".into(),
        "predicted".into(),
    ];
    header.extend(names.iter().map(|n| format!("p_{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.write(&predictions_path(task), &csv_bytes(&pred_rows, &header)?)?;

    let effective = Effective {
        task,
        inference,
        bootstrap: boot,
        clinical_fit: fit_opts,
        threshold,
        n_models: models.len(),
    };
    run.finish(&format!("evaluate-{}", task.name()), &effective)
}
