use ndarray::{ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MilError, MilModel, Mode};
use crate::bags::{pool_bags, BagError, FeatureBag};
use crate::rng::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub case_id: String,
    pub probs: Vec<f64>,
    /// Aggregation-token representation, averaged like `probs`.
    pub penultimate: Vec<f64>,
    /// Forward passes run per model.
    pub forward_passes: usize,
}

/// Rows kept by feature dropout: each independently with probability `1 - p`,
/// and one uniformly chosen row if none survive.
pub fn feature_dropout_indices(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if p <= 0.0 || n == 0 {
        return (0..n).collect();
    }
    let kept: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() >= p).collect();
    if kept.is_empty() {
        vec![rng.random_range(0..n)]
    } else {
        kept
    }
}

pub fn feature_dropout(bag: &FeatureBag, p: f64, rng: &mut ChaCha8Rng) -> FeatureBag {
    let kept = feature_dropout_indices(bag.n_tiles(), p, rng);
    FeatureBag {
        vectors: bag.vectors.select(Axis(0), &kept),
        ..bag.clone()
    }
}

fn running_mean(acc: &mut [f64], x: &[f64], k: usize) {
    for (m, v) in acc.iter_mut().zip(x) {
        *m += (v - *m) / k as f64;
    }
}

/// Mean eval-mode output over the given row subsets (all rows when `subsets`
/// is empty).
pub(super) fn mean_forward(
    model: &MilModel,
    tiles: ArrayView2<f32>,
    subsets: &[Vec<usize>],
) -> Result<(Vec<f64>, Vec<f64>), MilError> {
    if subsets.is_empty() {
        let out = model.forward(tiles, Mode::Eval, None)?;
        return Ok((out.probs, out.penultimate));
    }
    let mut probs = vec![0.0; model.config.n_classes];
    let mut pen = vec![0.0; model.config.embed_dim];
    for (k, rows) in subsets.iter().enumerate() {
        let out = model.forward(tiles.select(Axis(0), rows).view(), Mode::Eval, None)?;
        running_mean(&mut probs, &out.probs, k + 1);
        running_mean(&mut pen, &out.penultimate, k + 1);
    }
    Ok((probs, pen))
}

/// Row subsets used for a pooled bag of `n` tiles: none when `n <= cap`,
/// otherwise `n_subsets` sorted draws of `cap` rows without replacement.
pub fn case_subsets(
    n: usize,
    cap: usize,
    n_subsets: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    if n <= cap {
        return Vec::new();
    }
    (0..n_subsets)
        .map(|_| {
            let mut rows = index::sample(rng, n, cap).into_vec();
            rows.sort_unstable();
            rows
        })
        .collect()
}

/// Case-level prediction from one or more models over all of the case's bags.
///
/// Tiles of all bags are pooled. Above `cap` tiles, each model averages over
/// `n_subsets` random subsets of `cap` tiles (the same subsets for every
/// model); ensemble output is the mean over models.
pub fn predict_case(
    models: &[MilModel],
    bags: &[&FeatureBag],
    cap: usize,
    n_subsets: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Prediction, MilError> {
    let first = models
        .first()
        .ok_or_else(|| MilError::InvalidConfig("no models".into()))?;
    if models.iter().any(|m| m.config != first.config) {
        return Err(MilError::InvalidConfig(
            "ensemble models have different configs".into(),
        ));
    }
    if cap == 0 || n_subsets == 0 {
        return Err(MilError::InvalidConfig(
            "cap and n_subsets must be positive".into(),
        ));
    }
    let pooled = pool_bags(bags).map_err(|e| match e {
        BagError::DimMismatch { expected, found } => MilError::DimMismatch { expected, found },
        _ => MilError::EmptyBag,
    })?;
    let n = pooled.n_tiles();
    if n == 0 {
        return Err(MilError::EmptyBag);
    }
    let subsets = case_subsets(n, cap, n_subsets, rng);

    let mut probs = vec![0.0; first.config.n_classes];
    let mut pen = vec![0.0; first.config.embed_dim];
    for (k, model) in models.iter().enumerate() {
        let (p, e) = mean_forward(model, pooled.vectors.view(), &subsets)?;
        running_mean(&mut probs, &p, k + 1);
        running_mean(&mut pen, &e, k + 1);
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(MilError::NonFinite(format!(
            "probabilities for case {}",
            pooled.case_id
        )));
    }
    Ok(Prediction {
        case_id: pooled.case_id,
        probs,
        penultimate: pen,
        forward_passes: subsets.len().max(1),
    })
}

/// Accuracy of the rule `score >= threshold` predicting positive.
pub fn threshold_accuracy(scores: &[f64], positive: &[bool], threshold: f64) -> f64 {
    let correct = scores
        .iter()
        .zip(positive)
        .filter(|(s, y)| (**s >= threshold) == **y)
        .count();
    correct as f64 / scores.len() as f64
}

/// Decision threshold maximizing validation accuracy among the midpoints of
/// consecutive distinct scores and 0.5; ties go to the candidate nearest 0.5.
pub fn tune_threshold(scores: &[f64], positive: &[bool]) -> Result<f64, MilError> {
    if scores.len() != positive.len() {
        return Err(MilError::Threshold(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MilError::Threshold("non-finite score".into()));
    }
    if positive.iter().all(|y| *y) || positive.iter().all(|y| !*y) {
        return Err(MilError::Threshold(
            "validation set has a single class".into(),
        ));
    }
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates: Vec<f64> = distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    candidates.push(0.5);

    let mut best: (f64, f64) = (f64::NEG_INFINITY, 0.5);
    for t in candidates {
        let acc = threshold_accuracy(scores, positive, t);
        let better = acc > best.0
            || (acc == best.0
                && ((t - 0.5).abs() < (best.1 - 0.5).abs()
                    || ((t - 0.5).abs() == (best.1 - 0.5).abs() && t < best.1)));
        if better {
            best = (acc, t);
        }
    }
    Ok(best.1)
}

/// Per-tile attention of the aggregation token in the last block, averaged
/// over heads.
pub fn attention_map(model: &MilModel, tiles: ArrayView2<f32>) -> Result<Vec<f64>, MilError> {
    Ok(model.forward(tiles, Mode::Eval, None)?.attention)
}
