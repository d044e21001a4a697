//! Evaluation statistics: accuracy, exact Mann-Whitney AUROC (binary and
//! one-vs-rest), stratified percentile bootstrap, exact binomial and McNemar
//! tests, and Bonferroni adjustment.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("AUROC undefined: {positives} positive and {negatives} negative examples")]
    SingleClass { positives: usize, negatives: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Predictions and ground truth for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub case_ids: Vec<String>,
    pub labels: Vec<usize>,
    /// `n x K`, each row a probability vector.
    pub probs: Vec<Vec<f64>>,
    pub predicted: Vec<usize>,
}

impl EvalSet {
    /// Builds an evaluation set, predicting the argmax class of each row.
    pub fn from_probs(
        case_ids: Vec<String>,
        labels: Vec<usize>,
        probs: Vec<Vec<f64>>,
    ) -> Result<Self, MetricsError> {
        let predicted = probs.iter().map(|p| argmax(p)).collect();
        Self::new(case_ids, labels, probs, predicted)
    }

    pub fn new(
        case_ids: Vec<String>,
        labels: Vec<usize>,
        probs: Vec<Vec<f64>>,
        predicted: Vec<usize>,
    ) -> Result<Self, MetricsError> {
        let n = labels.len();
        for len in [case_ids.len(), probs.len(), predicted.len()] {
            if len != n {
                return Err(MetricsError::LengthMismatch(n, len));
            }
        }
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        let k = probs[0].len();
        for (i, row) in probs.iter().enumerate() {
            if row.len() != k {
                return Err(MetricsError::LengthMismatch(k, row.len()));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(MetricsError::InvalidArgument(format!(
                    "row {i} is not a probability vector"
                )));
            }
        }
        if let Some(l) = labels.iter().find(|l| **l >= k) {
            return Err(MetricsError::InvalidArgument(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        Ok(EvalSet {
            case_ids,
            labels,
            probs,
            predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.probs[0].len()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy<T: PartialEq>(truth: &[T], predicted: &[T]) -> Result<f64, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Twice the Mann-Whitney U statistic (ties count one half), as an integer.
fn doubled_u(scores: &[f64], positive: &[bool]) -> (u128, u64, u64) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut u2: u128 = 0;
    let mut neg_below: u64 = 0;
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        u2 += 2 * p as u128 * neg_below as u128 + p as u128 * q as u128;
        neg_below += q;
        n_pos += p;
        n_neg += q;
        i = j;
    }
    (u2, n_pos, n_neg)
}

/// Area under the ROC curve, computed exactly as P(s+ > s-) + P(s+ = s-)/2.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != positive.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), positive.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::InvalidArgument("NaN score".into()));
    }
    let (u2, n_pos, n_neg) = doubled_u(scores, positive);
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass {
            positives: n_pos as usize,
            negatives: n_neg as usize,
        });
    }
    Ok(u2 as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// One-vs-rest AUROC for class `k`.
pub fn auroc_ovr(probs: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64, MetricsError> {
    if probs.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(probs.len(), labels.len()));
    }
    let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
    let positive: Vec<bool> = labels.iter().map(|l| *l == k).collect();
    auroc_binary(&scores, &positive)
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

/// A metric evaluated on a (possibly resampled) subset of an [`EvalSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "metric", content = "class")]
pub enum Metric {
    Accuracy,
    /// One-vs-rest AUROC for the given class.
    Auroc(usize),
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Auroc(_) => "auroc",
        }
    }

    /// `None` when the metric is undefined on this subset.
    pub fn evaluate(&self, set: &EvalSet, idx: &[usize]) -> Option<f64> {
        match *self {
            Metric::Accuracy => {
                if idx.is_empty() {
                    return None;
                }
                let hits = idx
                    .iter()
                    .filter(|&&i| set.labels[i] == set.predicted[i])
                    .count();
                Some(hits as f64 / idx.len() as f64)
            }
            Metric::Auroc(k) => {
                let scores: Vec<f64> = idx.iter().map(|&i| set.probs[i][k]).collect();
                let positive: Vec<bool> = idx.iter().map(|&i| set.labels[i] == k).collect();
                auroc_binary(&scores, &positive).ok()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub resamples: usize,
    pub alpha: f64,
    /// Resamples on which the metric was undefined and that were redrawn.
    pub redraws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Cap on redraws per resample before giving up.
    pub max_redraws: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 10_000,
            alpha: 0.05,
            seed: 0,
            max_redraws: 1_000,
        }
    }
}

/// Linear-interpolation quantile of sorted data (the "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile confidence interval of `metric` from a bootstrap that resamples
/// with replacement within each true-class stratum.
///
/// Resample `r` draws from substream `(seed, r)`, so the result does not
/// depend on how the resamples are scheduled across threads.
pub fn bootstrap_ci<F>(
    set: &EvalSet,
    metric: F,
    config: &BootstrapConfig,
) -> Result<CiResult, MetricsError>
where
    F: Fn(&EvalSet, &[usize]) -> Option<f64> + Sync,
{
    if config.resamples == 0 {
        return Err(MetricsError::InvalidArgument(
            "resamples must be positive".into(),
        ));
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let point = metric(set, &all)
        .ok_or_else(|| MetricsError::InvalidArgument("metric undefined on the full set".into()))?;

    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in set.labels.iter().enumerate() {
        strata.entry(*l).or_default().push(i);
    }
    let strata: Vec<Vec<usize>> = strata.into_values().collect();

    let draws: Vec<Result<(f64, usize), MetricsError>> = (0..config.resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(config.seed, r as u64);
            let mut idx = Vec::with_capacity(set.len());
            for attempt in 0..=config.max_redraws {
                idx.clear();
                for s in &strata {
                    for _ in 0..s.len() {
                        idx.push(s[rng.random_range(0..s.len())]);
                    }
                }
                if let Some(v) = metric(set, &idx) {
                    return Ok((v, attempt));
                }
            }
            Err(MetricsError::InvalidArgument(format!(
                "metric undefined on {} consecutive redraws of resample {r}",
                config.max_redraws + 1
            )))
        })
        .collect();

    let mut values = Vec::with_capacity(config.resamples);
    let mut redraws = 0;
    for d in draws {
        let (v, extra) = d?;
        values.push(v);
        redraws += extra;
    }
    values.sort_by(f64::total_cmp);
    Ok(CiResult {
        point,
        lower: quantile_sorted(&values, config.alpha / 2.0),
        upper: quantile_sorted(&values, 1.0 - config.alpha / 2.0),
        resamples: config.resamples,
        alpha: config.alpha,
        redraws,
    })
}

/// Convenience wrapper for the built-in metrics.
pub fn bootstrap_metric(
    set: &EvalSet,
    metric: Metric,
    config: &BootstrapConfig,
) -> Result<CiResult, MetricsError> {
    bootstrap_ci(set, |s, idx| metric.evaluate(s, idx), config)
}

// ---------------------------------------------------------------------------
// Exact tests
// ---------------------------------------------------------------------------

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

fn binom_ln_pmf(i: u64, n: u64, p: f64) -> f64 {
    let mut v = ln_choose(n, i);
    if i > 0 {
        v += i as f64 * p.ln();
    }
    if i < n {
        v += (n - i) as f64 * (1.0 - p).ln();
    }
    v
}

/// Exact two-sided binomial test: sums the probabilities of all outcomes no
/// more likely than the observed one.
pub fn binomial_test(k: u64, n: u64, p0: f64) -> Result<f64, MetricsError> {
    if k > n {
        return Err(MetricsError::InvalidArgument(format!(
            "k = {k} exceeds n = {n}"
        )));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "p0 = {p0} outside (0, 1)"
        )));
    }
    let observed = binom_ln_pmf(k, n, p0);
    // Relative slack so outcomes tied in exact arithmetic are not lost to rounding.
    let cutoff = observed + 1e-7_f64.ln_1p();
    let mut total = 0.0;
    let mut all = true;
    for i in 0..=n {
        let lp = binom_ln_pmf(i, n, p0);
        if lp <= cutoff {
            total += lp.exp();
        } else {
            all = false;
        }
    }
    Ok(if all { 1.0 } else { total.min(1.0) })
}

/// Sum of `C(n, i)` for `i <= m`, exact while it fits in 128 bits.
fn binomial_lower_sum_exact(n: u64, m: u64) -> Option<u128> {
    if n > 120 {
        return None;
    }
    let mut c: u128 = 1;
    let mut total: u128 = 0;
    for i in 0..=m {
        if i > 0 {
            c = c * (n - i + 1) as u128 / i as u128;
        }
        total += c;
    }
    Some(total)
}

/// Exact McNemar test from the two discordant counts: `b` pairs where only
/// rater A was correct, `c` where only rater B was.
pub fn mcnemar_exact(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let m = b.min(c);
    let p = match binomial_lower_sum_exact(n, m) {
        // Power-of-two divisor: exact whenever the sum is representable.
        Some(sum) => 2.0 * sum as f64 / 2f64.powi(n as i32),
        None => {
            let ln_half = 0.5f64.ln() * n as f64;
            2.0 * (0..=m)
                .map(|i| (ln_choose(n, i) + ln_half).exp())
                .sum::<f64>()
        }
    };
    p.min(1.0)
}

/// Bonferroni-adjusted p value for `m` comparisons.
pub fn bonferroni(p: f64, m: usize) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::InvalidArgument(format!(
            "p = {p} outside [0, 1]"
        )));
    }
    if m == 0 {
        return Err(MetricsError::InvalidArgument("m must be at least 1".into()));
    }
    Ok((p * m as f64).min(1.0))
}

/// Discordant-pair counts of two raters against the same ground truth.
pub fn discordant_counts<T: PartialEq>(
    truth: &[T],
    a: &[T],
    b: &[T],
) -> Result<(u64, u64), MetricsError> {
    if truth.len() != a.len() || truth.len() != b.len() {
        return Err(MetricsError::LengthMismatch(
            truth.len(),
            a.len().min(b.len()),
        ));
    }
    let mut only_a = 0;
    let mut only_b = 0;
    for ((t, x), y) in truth.iter().zip(a).zip(b) {
        match (x == t, y == t) {
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            _ => {}
        }
    }
    Ok((only_a, only_b))
}

// ---------------------------------------------------------------------------
// Report rows
// ---------------------------------------------------------------------------

/// One line of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub model: String,
    pub slide_kind: String,
    pub metric: String,
    pub class: String,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Accuracy plus per-class one-vs-rest AUROC rows (a single positive-class row
/// for binary tasks), each with a bootstrap interval.
pub fn evaluation_rows(
    set: &EvalSet,
    class_names: &[String],
    task: &str,
    model: &str,
    slide_kind: &str,
    config: &BootstrapConfig,
) -> Result<Vec<ReportRow>, MetricsError> {
    let k = set.n_classes();
    if class_names.len() != k {
        return Err(MetricsError::LengthMismatch(class_names.len(), k));
    }
    let row = |metric: &str, class: &str, ci: CiResult| ReportRow {
        task: task.to_string(),
        model: model.to_string(),
        slide_kind: slide_kind.to_string(),
        metric: metric.to_string(),
        class: class.to_string(),
        point: ci.point,
        lo: ci.lower,
        hi: ci.upper,
    };
    let mut rows = vec![row(
        "accuracy",
        "all",
        bootstrap_metric(set, Metric::Accuracy, config)?,
    )];
    let classes: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    for c in classes {
        let ci = bootstrap_metric(set, Metric::Auroc(c), config)?;
        rows.push(row("auroc", &class_names[c], ci));
    }
    Ok(rows)
}
