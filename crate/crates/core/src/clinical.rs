//! Clinical-feature encoding, an L2-regularized multinomial logistic
//! regression, and the clinical + image-embedding fusion model built on it.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{ClinicalFeatures, Location, Sex};

pub const CLINICAL_DIM: usize = 9;
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClinicalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("missing clinical data for case {0}")]
    MissingClinical(String),
    #[error("feature length {found}, model expects {expected}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("model json: {0}")]
    Json(String),
}

/// `[age/100, male, female, head_neck, trunk, upper, lower, hands_feet, unknown]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClinicalVector(pub [f64; CLINICAL_DIM]);

pub fn encode_clinical(features: &ClinicalFeatures) -> ClinicalVector {
    let mut v = [0.0; CLINICAL_DIM];
    v[0] = f64::from(features.age) / 100.0;
    v[match features.sex {
        Sex::Male => 1,
        Sex::Female => 2,
    }] = 1.0;
    let slot = Location::ALL
        .iter()
        .position(|l| *l == features.location)
        .expect("listed location");
    v[3 + slot] = 1.0;
    ClinicalVector(v)
}

/// What the columns of a model's input mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureLayout {
    Clinical,
    Image { embed_dim: usize },
    ClinicalImage { embed_dim: usize },
    Raw { n_features: usize },
}

impl FeatureLayout {
    pub fn n_features(&self) -> usize {
        match *self {
            FeatureLayout::Clinical => CLINICAL_DIM,
            FeatureLayout::Image { embed_dim } => embed_dim,
            FeatureLayout::ClinicalImage { embed_dim } => CLINICAL_DIM + embed_dim,
            FeatureLayout::Raw { n_features } => n_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub layout_version: u32,
    pub layout: FeatureLayout,
    /// `n_classes x n_features`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 1e-3,
            tolerance: 1e-6,
            max_iterations: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub grad_norm: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub loss_history: Vec<f64>,
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter_mut().for_each(|v| *v = (*v - max).exp());
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= sum);
}

struct Problem {
    x: Array2<f64>,
    y: Vec<usize>,
    k: usize,
    lambda: f64,
}

impl Problem {
    /// Objective and gradient at `theta` = `[W (k x f) | b (k)]` flattened.
    fn eval(&self, theta: &Array1<f64>) -> (f64, Array1<f64>) {
        let (n, f) = self.x.dim();
        let k = self.k;
        let w = theta
            .slice(ndarray::s![..k * f])
            .into_shape_with_order((k, f))
            .expect("layout");
        let b = theta.slice(ndarray::s![k * f..]);
        let mut logits = self.x.dot(&w.t()) + b;
        let mut loss = 0.0;
        for (mut row, &yi) in logits.rows_mut().into_iter().zip(&self.y) {
            let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[yi];
            softmax_in_place(row.as_slice_mut().expect("contiguous"));
            row[yi] -= 1.0;
        }
        let resid = logits;
        let nf = n as f64;
        loss = loss / nf + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>();
        let gw = resid.t().dot(&self.x) / nf + &(&w * self.lambda);
        let gb = resid.sum_axis(Axis(0)) / nf;
        let mut grad = Array1::zeros(theta.len());
        grad.slice_mut(ndarray::s![..k * f])
            .assign(&Array1::from_iter(gw.iter().cloned()));
        grad.slice_mut(ndarray::s![k * f..]).assign(&gb);
        (loss, grad)
    }
}

fn check_rows(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<usize, ClinicalError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(ClinicalError::InvalidInput(format!(
            "{} rows for {} labels",
            x.len(),
            y.len()
        )));
    }
    let f = x[0].len();
    if f == 0 {
        return Err(ClinicalError::InvalidInput("rows have no features".into()));
    }
    if let Some(i) = x.iter().position(|r| r.len() != f) {
        return Err(ClinicalError::FeatureMismatch {
            expected: f,
            found: x[i].len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClinicalError::InvalidInput(
            "non-finite feature value".into(),
        ));
    }
    if n_classes < 2 {
        return Err(ClinicalError::InvalidInput(
            "need at least two classes".into(),
        ));
    }
    if let Some(l) = y.iter().find(|l| **l >= n_classes) {
        return Err(ClinicalError::InvalidInput(format!(
            "label {l} out of range for {n_classes} classes"
        )));
    }
    if y.iter().all(|l| *l == y[0]) {
        return Err(ClinicalError::SingleClass);
    }
    Ok(f)
}

/// Full-batch gradient descent from zeros with Barzilai-Borwein initial steps
/// and Armijo backtracking, until the gradient norm drops below tolerance.
pub fn fit_logreg(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    layout: FeatureLayout,
    options: &FitOptions,
) -> Result<(LogRegModel, FitReport), ClinicalError> {
    let f = check_rows(x, y, n_classes)?;
    if layout.n_features() != f {
        return Err(ClinicalError::FeatureMismatch {
            expected: layout.n_features(),
            found: f,
        });
    }
    if !(options.lambda >= 0.0) || !(options.tolerance > 0.0) {
        return Err(ClinicalError::InvalidInput(
            "lambda must be >= 0 and tolerance > 0".into(),
        ));
    }
    let problem = Problem {
        x: Array2::from_shape_fn((x.len(), f), |(i, j)| x[i][j]),
        y: y.to_vec(),
        k: n_classes,
        lambda: options.lambda,
    };
    let mut theta = Array1::zeros(n_classes * (f + 1));
    let (mut loss, mut grad) = problem.eval(&theta);
    let mut history = vec![loss];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut gnorm = grad.dot(&grad).sqrt();
    while gnorm >= options.tolerance {
        if iterations == options.max_iterations {
            return Err(ClinicalError::NotConverged {
                iterations,
                grad_norm: gnorm,
            });
        }
        let g2 = gnorm * gnorm;
        let mut alpha = step;
        let (next, next_loss, next_grad) = loop {
            let cand = &theta - &(&grad * alpha);
            let (l, g) = problem.eval(&cand);
            if l <= loss - 1e-4 * alpha * g2 {
                break (cand, l, g);
            }
            alpha *= 0.5;
            if alpha < 1e-20 {
                // No representable decrease left.
                return Err(ClinicalError::NotConverged {
                    iterations,
                    grad_norm: gnorm,
                });
            }
        };
        let s = &next - &theta;
        let dy = &next_grad - &grad;
        let sy = s.dot(&dy);
        step = if sy > 0.0 {
            (s.dot(&s) / sy).min(1e6)
        } else {
            alpha * 2.0
        };
        theta = next;
        loss = next_loss;
        grad = next_grad;
        gnorm = grad.dot(&grad).sqrt();
        history.push(loss);
        iterations += 1;
    }
    let weights = (0..n_classes)
        .map(|c| theta.slice(ndarray::s![c * f..(c + 1) * f]).to_vec())
        .collect();
    let bias = theta.slice(ndarray::s![n_classes * f..]).to_vec();
    let model = LogRegModel {
        layout_version: LAYOUT_VERSION,
        layout,
        weights,
        bias,
        lambda: options.lambda,
    };
    Ok((
        model,
        FitReport {
            iterations,
            grad_norm: gnorm,
            loss_history: history,
        },
    ))
}

impl LogRegModel {
    /// All-zero model: uniform predictions.
    pub fn zeros(layout: FeatureLayout, n_classes: usize, lambda: f64) -> Self {
        LogRegModel {
            layout_version: LAYOUT_VERSION,
            layout,
            weights: vec![vec![0.0; layout.n_features()]; n_classes],
            bias: vec![0.0; n_classes],
            lambda,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, ClinicalError> {
        let f = self.layout.n_features();
        if features.len() != f {
            return Err(ClinicalError::FeatureMismatch {
                expected: f,
                found: features.len(),
            });
        }
        let xv = ArrayView1::from(features);
        let mut logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| ArrayView1::from(&w[..]).dot(&xv) + b)
            .collect();
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Objective gradient norm on a data set (for stationarity checks).
    pub fn gradient_norm(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64, ClinicalError> {
        let f = check_rows(x, y, self.n_classes())?;
        let problem = Problem {
            x: Array2::from_shape_fn((x.len(), f), |(i, j)| x[i][j]),
            y: y.to_vec(),
            k: self.n_classes(),
            lambda: self.lambda,
        };
        let theta: Array1<f64> = self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .cloned()
            .collect();
        let (_, g) = problem.eval(&theta);
        Ok(g.dot(&g).sqrt())
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ClinicalError> {
        let m: LogRegModel =
            serde_json::from_str(s).map_err(|e| ClinicalError::Json(e.to_string()))?;
        if m.layout_version != LAYOUT_VERSION {
            return Err(ClinicalError::Json(format!(
                "unsupported layout version {}",
                m.layout_version
            )));
        }
        let f = m.layout.n_features();
        if m.weights.len() != m.bias.len() || m.weights.iter().any(|w| w.len() != f) {
            return Err(ClinicalError::Json(
                "weight shape does not match layout".into(),
            ));
        }
        Ok(m)
    }
}

/// `[clinical vector | penultimate]` for one case.
pub fn fusion_features(
    case_id: &str,
    clinical: Option<&ClinicalFeatures>,
    penultimate: &[f64],
) -> Result<Vec<f64>, ClinicalError> {
    let c = clinical.ok_or_else(|| ClinicalError::MissingClinical(case_id.to_string()))?;
    let mut v = encode_clinical(c).0.to_vec();
    v.extend_from_slice(penultimate);
    Ok(v)
}

/// Class probabilities from a fusion model for one case.
pub fn fuse_predict(
    model: &LogRegModel,
    case_id: &str,
    clinical: Option<&ClinicalFeatures>,
    penultimate: &[f64],
) -> Result<Vec<f64>, ClinicalError> {
    model.predict_proba(&fusion_features(case_id, clinical, penultimate)?)
}

/// Element-wise mean of per-model penultimate vectors.
pub fn average_penultimate(vectors: &[Vec<f64>]) -> Result<Vec<f64>, ClinicalError> {
    let first = vectors
        .first()
        .ok_or_else(|| ClinicalError::InvalidInput("no vectors".into()))?;
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(ClinicalError::InvalidInput(
            "penultimate vectors differ in length".into(),
        ));
    }
    let mut out = vec![0.0; first.len()];
    for (k, v) in vectors.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(v) {
            *o += (x - *o) / (k + 1) as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn feats(age: u32, sex: Sex, location: Location) -> ClinicalFeatures {
        ClinicalFeatures { age, sex, location }
    }

    #[test]
    fn encoding_layout() {
        assert_eq!(
            encode_clinical(&feats(50, Sex::Male, Location::Trunk)).0,
            [0.5, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            encode_clinical(&feats(1, Sex::Female, Location::Unknown)).0[0],
            0.01
        );
    }

    #[test]
    fn encoding_is_injective_and_round_trips() {
        let mut seen = Vec::new();
        for age in [1, 30, 85] {
            for sex in [Sex::Male, Sex::Female] {
                for loc in Location::ALL {
                    let v = encode_clinical(&feats(age, sex, loc));
                    assert_eq!(v.0[1] + v.0[2], 1.0);
                    assert_eq!(v.0[3..].iter().sum::<f64>(), 1.0);
                    let back: ClinicalVector =
                        serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
                    assert_eq!(back.0.map(f64::to_bits), v.0.map(f64::to_bits));
                    assert!(!seen.contains(&v));
                    seen.push(v);
                }
            }
        }
    }

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = crate::rng::stream(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let shift = if label == 1 { 1.5 } else { -1.5 };
            x.push(vec![
                shift + rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let (x, y) = toy(60, 1);
        let (m, report) = fit_logreg(
            &x,
            &y,
            2,
            FeatureLayout::Raw { n_features: 2 },
            &FitOptions::default(),
        )
        .unwrap();
        let correct = x.iter().zip(&y).filter(|(r, l)| {
            let p = m.predict_proba(r).unwrap();
            usize::from(p[1] > p[0]) == **l
        });
        assert_eq!(correct.count(), 60);
        assert!(report.grad_norm < 1e-6);
        assert!(m.gradient_norm(&x, &y).unwrap() < 1e-6);
        assert!(report.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn l2_shrinks_weights() {
        let (mut x, y) = toy(80, 2);
        // Overlap so the unregularized optimum is finite.
        x.iter_mut()
            .enumerate()
            .for_each(|(i, r)| r[0] *= if i % 7 == 0 { -1.0 } else { 1.0 });
        let layout = FeatureLayout::Raw { n_features: 2 };
        let fit = |lambda| {
            fit_logreg(
                &x,
                &y,
                2,
                layout,
                &FitOptions {
                    lambda,
                    ..FitOptions::default()
                },
            )
            .unwrap()
            .0
        };
        assert!(fit(0.1).weight_norm() < fit(0.0).weight_norm());
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        let err = fit_logreg(
            &x,
            &[1, 1],
            2,
            FeatureLayout::Raw { n_features: 1 },
            &FitOptions::default(),
        );
        assert_eq!(err.unwrap_err(), ClinicalError::SingleClass);
    }

    #[test]
    fn zero_model_is_uniform_and_json_round_trips() {
        let m = LogRegModel::zeros(FeatureLayout::ClinicalImage { embed_dim: 4 }, 3, 1e-3);
        let c = feats(40, Sex::Female, Location::HeadNeck);
        let p = fuse_predict(&m, "C1", Some(&c), &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(p, vec![1.0 / 3.0; 3]);
        assert_eq!(LogRegModel::from_json(&m.to_json()).unwrap(), m);
        assert_eq!(
            fuse_predict(&m, "C9", None, &[0.0; 4]).unwrap_err(),
            ClinicalError::MissingClinical("C9".into())
        );
    }

    #[test]
    fn penultimate_average() {
        let avg = average_penultimate(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(avg, vec![2.0, 3.0]);
    }
}
