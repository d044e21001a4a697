use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::infer::{feature_dropout_indices, mean_forward};
use super::{MilError, MilModel, ParamSet, TrainConfig};
use crate::metrics::argmax;
use crate::rng::{derive_seed, stream, substream};

/// One labelled case: its pooled tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct MilExample {
    pub case_id: String,
    pub label: usize,
    pub tiles: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    /// Mean training loss since the previous evaluation; absent at iteration 0.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    pub best_iteration: usize,
    pub best_val_loss: f64,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,train_loss,val_loss,lr\n");
        for e in &self.entries {
            let train = e.train_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.iteration, train, e.val_loss, e.lr
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MilModel,
    pub log: TrainingLog,
}

/// `lr0 * 2^-floor(t / halving_period)`.
pub fn learning_rate(cfg: &TrainConfig, iteration: usize) -> f64 {
    cfg.lr0 * 0.5f64.powi((iteration / cfg.lr_halving_period) as i32)
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Decoupled-weight-decay Adam update; decay applies only to tensors flagged
/// for it.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m.tensors)
        .zip(&mut state.v.tensors)
    {
        let decay = if p.decay {
            1.0 - lr * cfg.weight_decay
        } else {
            1.0
        };
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m.data[i] / bc1;
            let vhat = v.data[i] / bc2;
            p.data[i] = p.data[i] * decay - lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

const ORDER_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;
const STEP_STREAM: u64 = 3;

fn check_examples(model: &MilModel, examples: &[&MilExample]) -> Result<(), MilError> {
    for ex in examples {
        if ex.label >= model.config.n_classes {
            return Err(MilError::BadLabel {
                label: ex.label,
                n_classes: model.config.n_classes,
            });
        }
        if ex.tiles.nrows() == 0 {
            return Err(MilError::Fold(format!("case {} has no tiles", ex.case_id)));
        }
        if ex.tiles.ncols() != model.config.input_dim {
            return Err(MilError::DimMismatch {
                expected: model.config.input_dim,
                found: ex.tiles.ncols(),
            });
        }
    }
    Ok(())
}

fn random_subset(n: usize, cap: usize, rng: &mut crate::rng::ChaCha8Rng) -> Vec<usize> {
    let mut rows = index::sample(rng, n, cap).into_vec();
    rows.sort_unstable();
    rows
}

/// Trains on every fold except `fold_index`, validating on that fold, and
/// returns the parameters with the lowest validation loss.
///
/// One case per iteration, visited in a fresh random order each pass over the
/// training folds. Gradients are averaged over `grad_accum` iterations before
/// each AdamW step. Validation runs at every multiple of `validation_period`,
/// including iteration 0 and the final iteration.
pub fn train(
    initial: &MilModel,
    folds: &[Vec<MilExample>],
    fold_index: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, MilError> {
    initial.config.validate()?;
    cfg.validate(initial.config.n_classes)?;
    if fold_index >= folds.len() {
        return Err(MilError::Fold(format!(
            "fold index {fold_index} out of range for {} folds",
            folds.len()
        )));
    }
    let val: Vec<&MilExample> = folds[fold_index].iter().collect();
    let training: Vec<&MilExample> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold_index)
        .flat_map(|(_, f)| f.iter())
        .collect();
    if val.is_empty() {
        return Err(MilError::Fold(format!(
            "validation fold {fold_index} is empty"
        )));
    }
    if training.is_empty() {
        return Err(MilError::Fold(
            "no training cases outside the validation fold".into(),
        ));
    }
    check_examples(initial, &val)?;
    check_examples(initial, &training)?;

    let cap = initial.config.feature_cap;
    let val_subsets: Vec<Vec<Vec<usize>>> = val
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let n = ex.tiles.nrows();
            if n <= cap {
                return Vec::new();
            }
            let mut rng = substream(derive_seed(cfg.seed, VAL_STREAM), i as u64);
            (0..cfg.eval_subsets)
                .map(|_| random_subset(n, cap, &mut rng))
                .collect()
        })
        .collect();
    let weight_total: f64 = val.iter().map(|ex| cfg.class_weight(ex.label)).sum();
    let evaluate = |model: &MilModel| -> Result<(f64, f64), MilError> {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (ex, subsets) in val.iter().zip(&val_subsets) {
            let (probs, _) = mean_forward(model, ex.tiles.view(), subsets)?;
            loss -= cfg.class_weight(ex.label) * probs[ex.label].max(f64::MIN_POSITIVE).ln();
            correct += usize::from(argmax(&probs) == ex.label);
        }
        let loss = loss / weight_total;
        if !loss.is_finite() {
            return Err(MilError::NonFinite("validation loss".into()));
        }
        Ok((loss, correct as f64 / val.len() as f64))
    };

    let mut model = initial.clone();
    let mut adam = AdamState::new(&model.params);
    let mut grads = model.params.zeros_like();
    let mut order_rng = stream(derive_seed(cfg.seed, ORDER_STREAM));
    let mut order: Vec<usize> = Vec::new();
    let mut entries = Vec::new();
    let mut best: Option<(f64, usize, MilModel)> = None;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for t in 0..=cfg.total_iterations {
        if t % cfg.validation_period == 0 {
            let (val_loss, val_accuracy) = evaluate(&model)?;
            entries.push(LogEntry {
                iteration: t,
                train_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
                val_loss,
                val_accuracy,
                lr: learning_rate(cfg, t),
            });
            (loss_sum, loss_count) = (0.0, 0);
            if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
                best = Some((val_loss, t, model.clone()));
            }
        }
        if t == cfg.total_iterations {
            break;
        }

        if order.is_empty() {
            order = (0..training.len()).collect();
            order.shuffle(&mut order_rng);
            order.reverse();
        }
        let ex = training[order.pop().expect("refilled")];
        let mut rng = substream(derive_seed(cfg.seed, STEP_STREAM), t as u64);
        let n = ex.tiles.nrows();
        let mut rows = if n > cap {
            random_subset(n, cap, &mut rng)
        } else {
            (0..n).collect()
        };
        let kept = feature_dropout_indices(rows.len(), model.config.feature_dropout_p, &mut rng);
        rows = kept.into_iter().map(|i| rows[i]).collect();
        let x = ex.tiles.select(Axis(0), &rows).mapv(f64::from);
        let (loss, g) = model.loss_and_grad(
            x.view(),
            ex.label,
            cfg.class_weight(ex.label),
            Some(&mut rng),
        )?;
        if !loss.is_finite() {
            return Err(MilError::NonFinite(format!(
                "training loss at iteration {t}"
            )));
        }
        loss_sum += loss;
        loss_count += 1;
        grads.add_scaled(&g, 1.0);

        if (t + 1) % cfg.grad_accum == 0 {
            grads.scale(1.0 / cfg.grad_accum as f64);
            adamw_step(
                &mut model.params,
                &grads,
                &mut adam,
                learning_rate(cfg, t),
                cfg,
            );
            if !model.params.is_finite() {
                return Err(MilError::NonFinite(format!(
                    "parameters after iteration {t}"
                )));
            }
            grads.fill(0.0);
        }
    }

    let (best_val_loss, best_iteration, model) = best.expect("evaluated at iteration 0");
    Ok(TrainOutcome {
        model,
        log: TrainingLog {
            entries,
            best_iteration,
            best_val_loss,
        },
    })
}
